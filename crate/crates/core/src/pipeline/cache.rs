//! Versioned window cache: a JSON manifest plus one hashed binary block per window.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::CacheConfig;
use super::dataset::{Corpus, Performance};
use crate::codec::{Codec, CodebookStack, CodeIndices, CodecConfig};
use crate::frames::Frames;
use crate::grid::{boundary_onset_filter, segment_windows, DrumGrid, SegmentWindow, FAMILIES, NUMERIC_LANES};
use crate::pca::PcaBasis;
use crate::split::Split;
use crate::{Error, Result};

pub const GRID_SCHEMA_VERSION: u32 = 1;
/// Grid context kept on each side of a window; wider than the largest
/// conditioning receptive field.
pub const GRID_CONTEXT: f64 = 0.3;

const MANIFEST: &str = "manifest.json";
const CODEC_BLOCK: &str = "codec.bin";
const PCA_FILE: &str = "pca.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub key: String,
    pub split: Split,
    pub window: SegmentWindow,
    pub bpm: f64,
    pub grid_origin: f64,
    pub grid_cells: usize,
    pub vocab: [usize; FAMILIES],
    pub samples: usize,
    pub frames: usize,
    pub block: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub grid_schema_version: u32,
    pub corpus_hash: String,
    pub codec: CodecConfig,
    pub codec_hash: String,
    pub codec_sha256: String,
    pub components: usize,
    pub pca_sha256: String,
    /// Hash of the training frames the basis was fitted on.
    pub pca_train_hash: String,
    pub split_sources: BTreeMap<Split, Vec<String>>,
    pub splits: BTreeMap<Split, Vec<String>>,
    /// Windows removed by the boundary onset filter.
    pub dropped: Vec<String>,
    pub records: Vec<RecordEntry>,
}

/// One cached analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub split: Split,
    pub window: SegmentWindow,
    /// Grid cells around the window, absolute times.
    pub grid: DrumGrid,
    /// Reference audio of the window clip.
    pub audio: Vec<f32>,
    pub codes: CodeIndices,
    /// Summed codebook latents.
    pub y: Frames,
    /// Standardized PCA coordinates.
    pub x0: Frames,
}

impl WindowRecord {
    pub fn key(&self) -> String {
        self.window.key()
    }

    pub fn mask(&self) -> &[bool] {
        &self.window.frame_mask
    }

    fn block_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(self.grid.numeric().iter().flat_map(|v| v.to_le_bytes()));
        out.extend_from_slice(self.grid.articulations());
        out.extend(self.audio.iter().flat_map(|v| v.to_le_bytes()));
        out.extend(self.codes.as_slice().iter().flat_map(|v| v.to_le_bytes()));
        out.extend(self.y.as_slice().iter().flat_map(|v| v.to_le_bytes()));
        out.extend(self.x0.as_slice().iter().flat_map(|v| v.to_le_bytes()));
        out
    }
}

#[derive(Debug, Clone)]
pub struct Cache {
    pub manifest: CacheManifest,
    pub codec: Codec,
    pub basis: PcaBasis,
    pub records: Vec<WindowRecord>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reference clip `[round(start * sr), + span)`, zero padded past the end.
pub fn window_clip(audio: &[f32], window: &SegmentWindow, codec: &CodecConfig) -> Vec<f32> {
    let layout = codec.layout();
    let offset = (window.start * codec.sample_rate as f64).round() as usize;
    let samples = layout.span_samples(window.start, window.end);
    (0..samples).map(|i| audio.get(offset + i).copied().unwrap_or(0.0)).collect()
}

/// Per-source split assignment from a seeded shuffle; every split with a
/// positive weight gets at least one source when there are enough sources.
pub fn assign_splits(ids: &[String], weights: [f64; 3], seed: u64) -> Result<BTreeMap<Split, Vec<String>>> {
    if weights.iter().any(|w| !(*w >= 0.0)) || weights[0] <= 0.0 {
        return Err(Error::validation("split_weights", "need non-negative weights and a positive train weight"));
    }
    let mut order: Vec<String> = ids.to_vec();
    order.sort();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = order.len();
    let total: f64 = weights.iter().sum();
    let share = |w: f64| -> usize {
        if w > 0.0 && n >= 3 {
            ((w / total * n as f64).round() as usize).max(1)
        } else {
            (w / total * n as f64).round() as usize
        }
    };
    let test = share(weights[2]);
    let val = share(weights[1]).min(n.saturating_sub(test + 1));
    let train = n - val - test;
    let mut out = BTreeMap::new();
    let mut it = order.into_iter();
    for (split, count) in [(Split::Train, train), (Split::Validation, val), (Split::Test, test)] {
        let mut part: Vec<String> = it.by_ref().take(count).collect();
        part.sort();
        out.insert(split, part);
    }
    Ok(out)
}

struct Pending {
    split: Split,
    window: SegmentWindow,
    grid: DrumGrid,
    audio: Vec<f32>,
    codes: CodeIndices,
    y: Frames,
}

/// Segment, filter, encode and quantize every window; fit the codec and PCA
/// on the training split only.
pub fn build_cache(corpus: &Corpus, config: &CacheConfig) -> Result<Cache> {
    config.codec.validate()?;
    if corpus.spec.sample_rate != config.codec.sample_rate {
        return Err(Error::validation("codec.sample_rate", "differs from the corpus sample rate"));
    }
    let ids: Vec<String> = corpus.performances.iter().map(|p| p.id.clone()).collect();
    let split_sources = assign_splits(&ids, config.split_weights, config.split_seed)?;
    let split_of = |id: &str| {
        split_sources
            .iter()
            .find(|(_, v)| v.iter().any(|x| x == id))
            .map(|(s, _)| *s)
            .expect("every source is assigned")
    };
    let train_audio: Vec<&[f32]> = corpus
        .performances
        .iter()
        .filter(|p| split_of(&p.id) == Split::Train)
        .map(|p| p.audio.as_slice())
        .collect();
    let codec = Codec::fit(config.codec.clone(), train_audio)?;
    let layout = codec.layout();

    let mut pending = Vec::new();
    let mut dropped = Vec::new();
    for p in &corpus.performances {
        let split = split_of(&p.id);
        let grid = p.grid()?;
        for window in segment_windows(&grid, &p.beat_times(), &p.id, &layout)? {
            if !boundary_onset_filter(&window, &grid, &p.audio, layout.sample_rate) {
                dropped.push(window.key());
                continue;
            }
            pending.push(encode_window(p, &grid, window, split, &codec)?);
        }
    }
    let train: Vec<(Split, &Frames)> = pending
        .iter()
        .filter(|r| r.split == Split::Train)
        .map(|r| (r.split, &r.y))
        .collect();
    if train.is_empty() {
        return Err(Error::Degenerate("no training windows survived filtering".into()));
    }
    let basis = PcaBasis::fit(&train, config.components)?;
    let records: Vec<WindowRecord> = pending
        .into_iter()
        .map(|r| WindowRecord {
            x0: basis.encode_frames(&r.y),
            split: r.split,
            window: r.window,
            grid: r.grid,
            audio: r.audio,
            codes: r.codes,
            y: r.y,
        })
        .collect();
    let manifest = manifest_for(corpus.content_hash(), &codec, &basis, split_sources, dropped, &records)?;
    Ok(Cache {
        manifest,
        codec,
        basis,
        records,
    })
}

fn encode_window(p: &Performance, grid: &DrumGrid, window: SegmentWindow, split: Split, codec: &Codec) -> Result<Pending> {
    let audio = window_clip(&p.audio, &window, codec.config());
    let (codes, y) = codec.quantize(&codec.encode(&audio)?)?;
    if y.rows() != window.frames() {
        return Err(Error::Shape(format!("{}: {} latent frames, mask {}", window.key(), y.rows(), window.frames())));
    }
    Ok(Pending {
        split,
        grid: grid.slice(window.start - GRID_CONTEXT, window.end + GRID_CONTEXT),
        window,
        audio,
        codes,
        y,
    })
}

fn manifest_for(
    corpus_hash: String,
    codec: &Codec,
    basis: &PcaBasis,
    split_sources: BTreeMap<Split, Vec<String>>,
    dropped: Vec<String>,
    records: &[WindowRecord],
) -> Result<CacheManifest> {
    let mut splits: BTreeMap<Split, Vec<String>> = Split::ALL.iter().map(|s| (*s, Vec::new())).collect();
    let entries = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            splits.entry(r.split).or_default().push(r.key());
            RecordEntry {
                key: r.key(),
                split: r.split,
                window: r.window.clone(),
                bpm: r.grid.bpm(),
                grid_origin: r.grid.origin(),
                grid_cells: r.grid.len(),
                vocab: r.grid.vocab(),
                samples: r.audio.len(),
                frames: r.y.rows(),
                block: format!("blocks/{i:05}.bin"),
                sha256: sha256_hex(&r.block_bytes()),
            }
        })
        .collect();
    Ok(CacheManifest {
        grid_schema_version: GRID_SCHEMA_VERSION,
        corpus_hash,
        codec: codec.config().clone(),
        codec_hash: codec.content_hash(),
        codec_sha256: sha256_hex(&codec.stack().to_bytes()),
        components: basis.components(),
        pca_sha256: sha256_hex(&serde_json::to_vec(basis)?),
        pca_train_hash: basis.train_hash().to_string(),
        split_sources,
        splits,
        dropped,
        records: entries,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let out = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Shape("cache block is truncated".into()))?;
        self.pos += n;
        Ok(out)
    }

    fn values<T, const W: usize>(&mut self, count: usize, f: fn([u8; W]) -> T) -> Result<Vec<T>> {
        Ok(self
            .take(count * W)?
            .chunks_exact(W)
            .map(|c| f(c.try_into().expect("chunk width")))
            .collect())
    }
}

fn decode_block(entry: &RecordEntry, bytes: &[u8], codebooks: usize, dim: usize, components: usize) -> Result<WindowRecord> {
    let mut r = Reader { bytes, pos: 0 };
    let numeric = r.values(NUMERIC_LANES * entry.grid_cells, f32::from_le_bytes)?;
    let articulation = r.take(FAMILIES * entry.grid_cells)?.to_vec();
    let audio = r.values(entry.samples, f32::from_le_bytes)?;
    let codes = r.values(entry.frames * codebooks, u16::from_le_bytes)?;
    let y = r.values(entry.frames * dim, f64::from_le_bytes)?;
    let x0 = r.values(entry.frames * components, f64::from_le_bytes)?;
    if r.pos != bytes.len() {
        return Err(Error::Shape(format!("{}: trailing bytes in block", entry.key)));
    }
    Ok(WindowRecord {
        split: entry.split,
        window: entry.window.clone(),
        grid: DrumGrid::from_lanes(entry.grid_origin, entry.bpm, entry.vocab, numeric, articulation)?,
        audio,
        codes: CodeIndices::from_vec(codebooks, codes),
        y: Frames::from_vec(dim, y),
        x0: Frames::from_vec(components, x0),
    })
}

impl Cache {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &WindowRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn frame_rate(&self) -> f64 {
        self.codec.config().frame_rate()
    }

    pub fn sample_rate(&self) -> u32 {
        self.codec.config().sample_rate
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("blocks"))?;
        std::fs::write(dir.join(CODEC_BLOCK), self.codec.stack().to_bytes())?;
        std::fs::write(dir.join(PCA_FILE), serde_json::to_vec(&self.basis)?)?;
        for (r, e) in self.records.iter().zip(&self.manifest.records) {
            std::fs::write(dir.join(&e.block), r.block_bytes())?;
        }
        std::fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&self.manifest)?)?;
        Ok(())
    }

    /// Load and verify every content hash.
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| std::fs::read(dir.join(name)).map_err(|e| Error::cache(dir.join(name), e.to_string()));
        let manifest: CacheManifest = serde_json::from_slice(&read(MANIFEST)?)?;
        if manifest.grid_schema_version != GRID_SCHEMA_VERSION {
            return Err(Error::cache(dir, format!("grid schema version {}", manifest.grid_schema_version)));
        }
        let check = |name: &str, bytes: &[u8], expected: &str| {
            if sha256_hex(bytes) == expected {
                Ok(())
            } else {
                Err(Error::cache(dir.join(name), "content hash mismatch"))
            }
        };
        let c = &manifest.codec;
        let stack_bytes = read(CODEC_BLOCK)?;
        check(CODEC_BLOCK, &stack_bytes, &manifest.codec_sha256)?;
        let stack = CodebookStack::from_bytes(&stack_bytes, c.latent_dim, c.codebooks, c.entries, c.rank)?;
        let codec = Codec::new(c.clone(), stack)?;
        if codec.content_hash() != manifest.codec_hash {
            return Err(Error::cache(dir.join(CODEC_BLOCK), "codec hash mismatch"));
        }
        let pca_bytes = read(PCA_FILE)?;
        check(PCA_FILE, &pca_bytes, &manifest.pca_sha256)?;
        let basis: PcaBasis = serde_json::from_slice(&pca_bytes)?;
        if basis.train_hash() != manifest.pca_train_hash {
            return Err(Error::cache(dir.join(PCA_FILE), "PCA training hash mismatch"));
        }
        let records = manifest
            .records
            .iter()
            .map(|e| {
                let bytes = read(&e.block)?;
                check(&e.block, &bytes, &e.sha256)?;
                decode_block(e, &bytes, c.codebooks, c.latent_dim, manifest.components)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            manifest,
            codec,
            basis,
            records,
        })
    }
}
