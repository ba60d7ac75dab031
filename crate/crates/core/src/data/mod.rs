//! Patch dataset ingestion, pair lists, and batch assembly.
//!
//! The on-disk layout follows the published patch-dataset distribution:
//! a directory of 1024×1024 grayscale mosaic bitmaps (`patches*.bmp`, each
//! a 16×16 grid of 64×64 patches in row-major order, files in
//! lexicographic order), an `info.txt` with one line per patch whose first
//! field is the 3D point id, and whitespace-separated match files whose
//! fields 1 and 4 are patch indices and fields 2 and 5 point ids (1-based
//! field numbering; remaining fields are ignored).

mod bmp;
mod synthetic;

pub use bmp::{read_gray_bmp, write_gray_bmp};
pub use synthetic::{make_synthetic_dataset, make_synthetic_dataset_with, SyntheticConfig};

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::preprocess::{AugmentTag, PreprocessPipeline, PATCH_PIXELS, PATCH_SIZE};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MOSAIC_SIDE: usize = 1024;
const TILES_PER_ROW: usize = MOSAIC_SIDE / PATCH_SIZE; // 16
const TILES_PER_MOSAIC: usize = TILES_PER_ROW * TILES_PER_ROW; // 256

/// Immutable collection of 64×64 patches with their 3D point ids.
#[derive(Debug, Clone)]
pub struct PatchStore {
    subset: String,
    patches: Vec<u8>,
    point_ids: Vec<u32>,
}

impl PatchStore {
    pub fn from_parts(subset: String, patches: Vec<u8>, point_ids: Vec<u32>) -> Result<Self> {
        if patches.len() != point_ids.len() * PATCH_PIXELS {
            return Err(Error::Data(format!(
                "patch buffer holds {} pixels but {} point ids × {PATCH_PIXELS} expected",
                patches.len(),
                point_ids.len()
            )));
        }
        Ok(PatchStore {
            subset,
            patches,
            point_ids,
        })
    }

    pub fn subset(&self) -> &str {
        &self.subset
    }

    pub fn len(&self) -> usize {
        self.point_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_ids.is_empty()
    }

    pub fn patch(&self, i: usize) -> &[u8] {
        &self.patches[i * PATCH_PIXELS..(i + 1) * PATCH_PIXELS]
    }

    pub fn point_id(&self, i: usize) -> u32 {
        self.point_ids[i]
    }
}

/// A labeled pair of patch indices; `label = 1` iff both patches belong to
/// the same 3D point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchPair {
    pub idx1: u32,
    pub idx2: u32,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

/// Ordered pair list with its protocol role. Test lists must never feed
/// training or normalization statistics.
#[derive(Debug, Clone)]
pub struct PairList {
    pub pairs: Vec<PatchPair>,
    pub role: Role,
}

impl PairList {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Guard used by training and stats paths.
    pub fn require_train(&self, what: &str) -> Result<()> {
        if self.role != Role::Train {
            return Err(Error::Arg(format!(
                "protocol violation: {what} requires a train-role pair list"
            )));
        }
        Ok(())
    }
}

/// Loads the mosaic-bitmap dataset layout from a directory.
pub fn load_patch_store(dir: &Path) -> Result<PatchStore> {
    let info_path = dir.join("info.txt");
    if !info_path.exists() {
        return Err(Error::Data(format!(
            "{}: missing info.txt",
            dir.display()
        )));
    }
    let info = fs::read_to_string(&info_path)?;
    let mut point_ids = Vec::new();
    for (lineno, line) in info.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let first = line.split_whitespace().next().unwrap();
        let id: u32 = first.parse().map_err(|_| {
            Error::Data(format!(
                "{}:{}: point id `{first}` is not an integer",
                info_path.display(),
                lineno + 1
            ))
        })?;
        point_ids.push(id);
    }
    if point_ids.is_empty() {
        return Err(Error::Data(format!(
            "{}: info.txt lists no patches",
            dir.display()
        )));
    }

    let mut mosaics: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|e| e.eq_ignore_ascii_case("bmp"))
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("patches"))
        })
        .collect();
    mosaics.sort();
    let needed = point_ids.len().div_ceil(TILES_PER_MOSAIC);
    if mosaics.len() != needed {
        return Err(Error::Data(format!(
            "{}: info.txt lists {} patches needing {} mosaic(s), found {}",
            dir.display(),
            point_ids.len(),
            needed,
            mosaics.len()
        )));
    }

    let mut patches = vec![0u8; point_ids.len() * PATCH_PIXELS];
    for (m, path) in mosaics.iter().enumerate() {
        let (w, h, pixels) = read_gray_bmp(path)?;
        if w != MOSAIC_SIDE || h != MOSAIC_SIDE {
            return Err(Error::Data(format!(
                "{}: mosaic must be {MOSAIC_SIDE}×{MOSAIC_SIDE}, got {w}×{h}",
                path.display()
            )));
        }
        let lo = m * TILES_PER_MOSAIC;
        let hi = ((m + 1) * TILES_PER_MOSAIC).min(point_ids.len());
        for i in lo..hi {
            let tile = i % TILES_PER_MOSAIC;
            let (ty, tx) = (tile / TILES_PER_ROW, tile % TILES_PER_ROW);
            let dst = &mut patches[i * PATCH_PIXELS..(i + 1) * PATCH_PIXELS];
            for row in 0..PATCH_SIZE {
                let src_off = (ty * PATCH_SIZE + row) * MOSAIC_SIDE + tx * PATCH_SIZE;
                dst[row * PATCH_SIZE..(row + 1) * PATCH_SIZE]
                    .copy_from_slice(&pixels[src_off..src_off + PATCH_SIZE]);
            }
        }
    }
    let subset = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("dataset")
        .to_string();
    PatchStore::from_parts(subset, patches, point_ids)
}

/// Writes a store in the same mosaic layout (fixture generation and the
/// synthetic-dataset export path).
pub fn write_patch_store(dir: &Path, store: &PatchStore) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut info = String::new();
    for i in 0..store.len() {
        // point id, then a placeholder second field as in the original files
        info.push_str(&format!("{} 0\n", store.point_id(i)));
    }
    fs::write(dir.join("info.txt"), info)?;
    let n_mosaics = store.len().div_ceil(TILES_PER_MOSAIC);
    for m in 0..n_mosaics {
        let mut pixels = vec![0u8; MOSAIC_SIDE * MOSAIC_SIDE];
        let lo = m * TILES_PER_MOSAIC;
        let hi = ((m + 1) * TILES_PER_MOSAIC).min(store.len());
        for i in lo..hi {
            let tile = i % TILES_PER_MOSAIC;
            let (ty, tx) = (tile / TILES_PER_ROW, tile % TILES_PER_ROW);
            let src = store.patch(i);
            for row in 0..PATCH_SIZE {
                let dst_off = (ty * PATCH_SIZE + row) * MOSAIC_SIDE + tx * PATCH_SIZE;
                pixels[dst_off..dst_off + PATCH_SIZE]
                    .copy_from_slice(&src[row * PATCH_SIZE..(row + 1) * PATCH_SIZE]);
            }
        }
        write_gray_bmp(&dir.join(format!("patches{m:04}.bmp")), MOSAIC_SIDE, MOSAIC_SIDE, &pixels)?;
    }
    Ok(())
}

/// Parses a match file against the store: labels derive from point-id
/// equality, indices are bounds-checked, and the file's point ids must
/// agree with the store's.
pub fn load_pair_list(file: &Path, store: &PatchStore, role: Role) -> Result<PairList> {
    let text = fs::read_to_string(file)?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 5 {
            return Err(Error::Data(format!(
                "{}:{}: expected at least 5 fields, got {}",
                file.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |s: &str, what: &str| -> Result<u32> {
            s.parse().map_err(|_| {
                Error::Data(format!(
                    "{}:{}: {what} `{s}` is not an integer",
                    file.display(),
                    lineno + 1
                ))
            })
        };
        let idx1 = parse(fields[0], "patch index")?;
        let pid1 = parse(fields[1], "point id")?;
        let idx2 = parse(fields[3], "patch index")?;
        let pid2 = parse(fields[4], "point id")?;
        for idx in [idx1, idx2] {
            if idx as usize >= store.len() {
                return Err(Error::Data(format!(
                    "{}:{}: patch index {idx} out of range (store holds {})",
                    file.display(),
                    lineno + 1,
                    store.len()
                )));
            }
        }
        for (idx, pid) in [(idx1, pid1), (idx2, pid2)] {
            if store.point_id(idx as usize) != pid {
                return Err(Error::Data(format!(
                    "{}:{}: integrity error: patch {idx} has point id {} in info.txt but {pid} here",
                    file.display(),
                    lineno + 1,
                    store.point_id(idx as usize)
                )));
            }
        }
        pairs.push(PatchPair {
            idx1,
            idx2,
            label: u8::from(pid1 == pid2),
        });
    }
    Ok(PairList { pairs, role })
}

/// Writes pairs in the match-file format the loader reads.
pub fn write_pair_list(file: &Path, list: &PairList, store: &PatchStore) -> Result<()> {
    let mut out = String::new();
    for p in &list.pairs {
        out.push_str(&format!(
            "{} {} 0 {} {} 0\n",
            p.idx1,
            store.point_id(p.idx1 as usize),
            p.idx2,
            store.point_id(p.idx2 as usize)
        ));
    }
    fs::write(file, out)?;
    Ok(())
}

/// A training pair together with the augmentation applied to both members.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaggedPair {
    pub pair: PatchPair,
    pub tag: AugmentTag,
}

/// One assembled mini-batch of preprocessed pair tensors.
#[derive(Debug, Clone)]
pub struct PairBatch<S = f32> {
    pub x1: Tensor<S>,
    pub x2: Tensor<S>,
    pub labels: Vec<u8>,
    /// Rows of the source pair stream, for diagnostics.
    pub rows: Vec<usize>,
}

/// Deterministic epoch batching: a permutation derived from
/// `(shuffle_seed, epoch)` split into consecutive batches. In train mode
/// the final short batch is dropped (batch statistics need full batches);
/// in eval mode it is kept.
pub fn epoch_batches(
    n_pairs: usize,
    batch_size: usize,
    shuffle_seed: u64,
    epoch: u64,
    drop_last: bool,
) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1);
    let mut order: Vec<usize> = (0..n_pairs).collect();
    let mut rng = Rng::derive(shuffle_seed, epoch);
    rng.shuffle(&mut order);
    let mut batches: Vec<Vec<usize>> = order
        .chunks(batch_size)
        .map(|chunk| chunk.to_vec())
        .collect();
    if drop_last {
        if let Some(last) = batches.last() {
            if last.len() < batch_size {
                batches.pop();
            }
        }
    }
    batches
}

/// Materializes one batch: fetch both patches, preprocess (equalize /
/// augment / normalize), and stack into `B×1×64×64` tensors.
pub fn assemble_batch<S: Scalar>(
    stream: &[TaggedPair],
    rows: &[usize],
    store: &PatchStore,
    pipeline: &PreprocessPipeline,
) -> PairBatch<S> {
    let b = rows.len();
    let mut x1 = Tensor::zeros(&[b, 1, PATCH_SIZE, PATCH_SIZE]);
    let mut x2 = Tensor::zeros(&[b, 1, PATCH_SIZE, PATCH_SIZE]);
    let mut labels = Vec::with_capacity(b);
    for (slot, &row) in rows.iter().enumerate() {
        let tp = &stream[row];
        pipeline.apply_into(
            store.patch(tp.pair.idx1 as usize),
            tp.tag,
            &mut x1.data_mut()[slot * PATCH_PIXELS..(slot + 1) * PATCH_PIXELS],
        );
        pipeline.apply_into(
            store.patch(tp.pair.idx2 as usize),
            tp.tag,
            &mut x2.data_mut()[slot * PATCH_PIXELS..(slot + 1) * PATCH_PIXELS],
        );
        labels.push(tp.pair.label);
    }
    PairBatch {
        x1,
        x2,
        labels,
        rows: rows.to_vec(),
    }
}

/// Dataset-global normalization statistics from the patches referenced by a
/// train-role pair list, under the pipeline's equalization setting.
pub fn stats_for_pairs(
    store: &PatchStore,
    list: &PairList,
    hist_eq: bool,
) -> Result<crate::preprocess::NormStats> {
    list.require_train("normalization statistics")?;
    let mut indices: Vec<u32> = list
        .pairs
        .iter()
        .flat_map(|p| [p.idx1, p.idx2])
        .collect();
    indices.sort_unstable();
    indices.dedup();
    if hist_eq {
        let equalized: Vec<Vec<u8>> = indices
            .iter()
            .map(|&i| crate::preprocess::hist_equalize(store.patch(i as usize)))
            .collect();
        crate::preprocess::compute_norm_stats(equalized.iter().map(|p| p.as_slice()))
    } else {
        crate::preprocess::compute_norm_stats(indices.iter().map(|&i| store.patch(i as usize)))
    }
}
