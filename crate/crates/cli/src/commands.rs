//! One function per subcommand. All artifacts embed the resolved run
//! configuration; all randomness is seeded through the config.

use std::collections::BTreeMap;
use std::path::Path;

use patchdesc::arch::ArchSpec;
use patchdesc::data::{
    load_pair_list, load_patch_store, make_synthetic_dataset_with, read_gray_bmp, stats_for_pairs,
    write_pair_list, write_patch_store, PairList, PatchStore, Role, SyntheticConfig,
};
use patchdesc::eval::{evaluate, score_pairs, top_errors};
use patchdesc::loss::pair_distance;
use patchdesc::model::{load_tensor, save_tensor, Model};
use patchdesc::optim::{auto_margin, AdadeltaConfig, TrainData, TrainSchedule, Trainer};
use patchdesc::preprocess::{NormStats, PreprocessPipeline, PATCH_PIXELS, PATCH_SIZE};
use patchdesc::tensor::Tensor;
use patchdesc::{Error, Mode, Result};

use crate::config::{parse_meta, RunMeta};
use crate::{
    DescribeArgs, EvalArgs, MatchArgs, StatsArgs, SynthArgs, TrainArgs,
};

fn load_dataset(data: &Path, pairs: &Path, role: Role) -> Result<(PatchStore, PairList)> {
    let store = load_patch_store(data)?;
    let list = load_pair_list(pairs, &store, role)?;
    Ok((store, list))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_points: a.points,
        patches_per_point: a.per_point,
        seed: a.seed,
        contrast_jitter: a.contrast_jitter,
        misalignment: a.misalign,
        noise: a.noise,
        max_train_pairs: a.train_pairs,
        max_test_pairs: a.test_pairs,
        ..SyntheticConfig::default()
    };
    let (store, train, test) = make_synthetic_dataset_with(cfg);
    std::fs::create_dir_all(&a.out)?;
    write_patch_store(&a.out, &store)?;
    write_pair_list(&a.out.join("train.txt"), &train, &store)?;
    write_pair_list(&a.out.join("test.txt"), &test, &store)?;
    println!(
        "wrote {} patches, {} train pairs, {} test pairs to {}",
        store.len(),
        train.len(),
        test.len(),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_stats(a: &StatsArgs, hist_eq: bool) -> Result<()> {
    let (store, list) = load_dataset(&a.data, &a.pairs, Role::Train)?;
    let stats = stats_for_pairs(&store, &list, hist_eq)?;
    let mut meta = RunMeta::new("stats");
    meta.push("data", a.data.display().to_string());
    meta.push("pairs", a.pairs.display().to_string());
    meta.push("hist_eq", hist_eq.to_string());
    meta.push("mean", stats.mean.to_string());
    meta.push("std", stats.std.to_string());
    std::fs::write(&a.out, meta.render())?;
    println!("mean = {}, std = {}", stats.mean, stats.std);
    Ok(())
}

/// Reads a stats file produced by `cmd_stats`.
fn load_stats(path: &Path) -> Result<(NormStats, bool)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Arg(format!("stats file {}: {e}", path.display())))?;
    let map = parse_meta(&text);
    let get = |key: &str| -> Result<f64> {
        map.get(key)
            .ok_or_else(|| Error::Arg(format!("stats file {}: missing `{key}`", path.display())))?
            .parse()
            .map_err(|_| Error::Arg(format!("stats file {}: bad `{key}`", path.display())))
    };
    let mean = get("mean")?;
    let std = get("std")?;
    let hist_eq = map
        .get("hist_eq")
        .map(|v| v == "true")
        .unwrap_or(false);
    if std <= 0.0 {
        return Err(Error::Arg(format!(
            "stats file {}: std must be positive",
            path.display()
        )));
    }
    Ok((NormStats { mean, std }, hist_eq))
}

pub struct TrainResolved {
    pub arch: String,
    pub hist_eq: bool,
    pub augment: bool,
    pub margin: String,
    pub epochs: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle_seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub checkpoint_every: u64,
}

pub fn cmd_train(a: &TrainArgs, r: &TrainResolved) -> Result<()> {
    let (store, list) = load_dataset(&a.data, &a.pairs, Role::Train)?;
    let (stats, stats_hist_eq) = load_stats(&a.stats)?;
    if stats_hist_eq != r.hist_eq {
        return Err(Error::Arg(format!(
            "stats file was computed with hist_eq = {stats_hist_eq} but the run requests {}; \
             recompute stats",
            r.hist_eq
        )));
    }
    let pipeline = PreprocessPipeline {
        hist_eq: r.hist_eq,
        stats,
    };
    let arch_string = match r.arch.as_str() {
        "cnn7" => patchdesc::arch::CNN7.to_string(),
        "cnn7stn" => patchdesc::arch::CNN7STN.to_string(),
        custom => custom.to_string(),
    };
    let arch = ArchSpec::parse(&arch_string)?;
    let adacfg = AdadeltaConfig {
        lr: r.lr,
        weight_decay: r.weight_decay,
        ..AdadeltaConfig::default()
    };

    let mut meta = RunMeta::new("train");
    meta.push("data", a.data.display().to_string());
    meta.push("pairs", a.pairs.display().to_string());
    meta.push("arch", &arch_string);
    meta.push("hist_eq", r.hist_eq.to_string());
    meta.push("augment", r.augment.to_string());
    meta.push("epochs", r.epochs.to_string());
    meta.push("batch_size", r.batch_size.to_string());
    meta.push("seed", r.seed.to_string());
    meta.push("shuffle_seed", r.shuffle_seed.to_string());
    meta.push("lr", r.lr.to_string());
    meta.push("weight_decay", r.weight_decay.to_string());
    meta.push("stats_mean", stats.mean.to_string());
    meta.push("stats_std", stats.std.to_string());

    let mut trainer = match &a.resume {
        Some(ckpt) => {
            let schedule = TrainSchedule {
                epochs: r.epochs,
                batch_size: r.batch_size,
                shuffle_seed: r.shuffle_seed,
                margin: 1.0, // replaced by the checkpoint's margin
                checkpoint_every: r.checkpoint_every,
            };
            let (trainer, _) = Trainer::load_checkpoint(ckpt, schedule)?;
            meta.push("margin", trainer.schedule.margin.to_string());
            meta.push("resumed_from", ckpt.display().to_string());
            trainer
        }
        None => {
            let mut model = Model::<f32>::init(&arch, r.seed)?;
            patchdesc::optim::calibrate_on_pairs(
                &mut model,
                &store,
                &list,
                &pipeline,
                8,
                r.batch_size,
            )?;
            let margin = match r.margin.as_str() {
                "auto" => auto_margin(&model, &store, &list, &pipeline, 1000)?,
                fixed => fixed.parse::<f64>().map_err(|_| {
                    Error::Arg(format!("margin must be `auto` or a number, got `{fixed}`"))
                })?,
            };
            meta.push("margin", margin.to_string());
            let schedule = TrainSchedule {
                epochs: r.epochs,
                batch_size: r.batch_size,
                shuffle_seed: r.shuffle_seed,
                margin,
                checkpoint_every: r.checkpoint_every,
            };
            Trainer::new(model, adacfg, schedule)?
        }
    };

    std::fs::create_dir_all(&a.out)?;
    let metadata = meta.render();
    let data = TrainData {
        store: &store,
        pairs: &list,
        pipeline: &pipeline,
        augment: r.augment,
    };
    trainer.run(&data, Some(&a.out), &metadata)?;

    trainer.model.set_mode(Mode::Eval);
    trainer.model.save(&a.out.join("model.pdm"), &metadata)?;
    std::fs::write(a.out.join("loss_trace.csv"), trainer.trace_csv(&metadata))?;
    let final_loss = trainer.trace.last().map(|r| r.mean_loss);
    println!(
        "trained {} iterations over {} epochs; final mean loss {:?}; model at {}",
        trainer.iteration,
        trainer.epoch,
        final_loss,
        a.out.join("model.pdm").display()
    );
    Ok(())
}

/// Rebuilds the preprocessing pipeline a model was trained with from its
/// embedded metadata.
fn pipeline_from_meta(meta: &BTreeMap<String, String>, model_path: &Path) -> Result<PreprocessPipeline> {
    let get = |key: &str| -> Result<f64> {
        meta.get(key)
            .ok_or_else(|| {
                Error::Arg(format!(
                    "model {} carries no `{key}` in its metadata; stats missing",
                    model_path.display()
                ))
            })?
            .parse()
            .map_err(|_| Error::Arg(format!("model metadata `{key}` is not a number")))
    };
    let mean = get("stats_mean")?;
    let std = get("stats_std")?;
    let hist_eq = meta.get("hist_eq").map(|v| v == "true").unwrap_or(false);
    Ok(PreprocessPipeline {
        hist_eq,
        stats: NormStats { mean, std },
    })
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (model, model_meta) = Model::load(&a.model)?;
    let meta_map = parse_meta(&model_meta);
    let pipeline = pipeline_from_meta(&meta_map, &a.model)?;
    let (store, list) = load_dataset(&a.data, &a.pairs, Role::Test)?;
    let scored = score_pairs(&model, &list, &store, &pipeline)?;

    let mut meta = RunMeta::new("eval");
    meta.push("model", a.model.display().to_string());
    meta.push("data", a.data.display().to_string());
    meta.push("pairs", a.pairs.display().to_string());
    for (k, v) in &meta_map {
        meta.push(&format!("model.{k}"), v);
    }
    let report = evaluate(&scored, a.bins, &meta.render())?;
    report.write_csv_bundle(&a.out)?;
    if a.top_errors > 0 {
        let (fps, fns) = top_errors(&scored, a.top_errors);
        let mut out = String::new();
        for line in meta.render().lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out.push_str("kind,rank,idx1,idx2,distance\n");
        for (rank, (row, d)) in fps.iter().enumerate() {
            let p = list.pairs[*row];
            out.push_str(&format!("false_positive,{rank},{},{},{d}\n", p.idx1, p.idx2));
        }
        for (rank, (row, d)) in fns.iter().enumerate() {
            let p = list.pairs[*row];
            out.push_str(&format!("false_negative,{rank},{},{},{d}\n", p.idx1, p.idx2));
        }
        std::fs::write(a.out.join("top_errors.csv"), out)?;
    }
    println!("FPR@95 = {}", report.fpr_at_95);
    Ok(())
}

/// Reads patches from a grayscale BMP whose sides are multiples of 64,
/// tiled row-major.
fn patches_from_bmp(path: &Path, count: usize) -> Result<Tensor<f32>> {
    let (w, h, pixels) = read_gray_bmp(path)?;
    if w % PATCH_SIZE != 0 || h % PATCH_SIZE != 0 {
        return Err(Error::Data(format!(
            "{}: side lengths must be multiples of {PATCH_SIZE}, got {w}×{h}",
            path.display()
        )));
    }
    let (tx, ty) = (w / PATCH_SIZE, h / PATCH_SIZE);
    let total = tx * ty;
    let n = if count == 0 { total } else { count.min(total) };
    let mut raw = vec![0u8; n * PATCH_PIXELS];
    for i in 0..n {
        let (gy, gx) = (i / tx, i % tx);
        for row in 0..PATCH_SIZE {
            let src = (gy * PATCH_SIZE + row) * w + gx * PATCH_SIZE;
            raw[i * PATCH_PIXELS + row * PATCH_SIZE..i * PATCH_PIXELS + (row + 1) * PATCH_SIZE]
                .copy_from_slice(&pixels[src..src + PATCH_SIZE]);
        }
    }
    // Raw bytes; normalization happens against the model's stats.
    Ok(Tensor::from_vec(
        &[n, PATCH_PIXELS],
        raw.iter().map(|&v| v as f32).collect(),
    )?)
}

pub fn cmd_describe(a: &DescribeArgs) -> Result<()> {
    let (model, model_meta) = Model::load(&a.model)?;
    let meta_map = parse_meta(&model_meta);
    let pipeline = pipeline_from_meta(&meta_map, &a.model)?;
    let raw = patches_from_bmp(&a.patches, a.count)?;
    let n = raw.shape()[0];

    let mut meta = RunMeta::new("describe");
    meta.push("model", a.model.display().to_string());
    meta.push("patches", a.patches.display().to_string());
    for (k, v) in &meta_map {
        meta.push(&format!("model.{k}"), v);
    }
    let metadata = meta.render();

    let mut descriptors = Tensor::<f32>::zeros(&[n, model.descriptor_len()]);
    let chunk = 128;
    let mut lo = 0;
    while lo < n {
        let hi = (lo + chunk).min(n);
        let mut x = Tensor::<f32>::zeros(&[hi - lo, 1, PATCH_SIZE, PATCH_SIZE]);
        for (slot, i) in (lo..hi).enumerate() {
            let bytes: Vec<u8> = raw.data()[i * PATCH_PIXELS..(i + 1) * PATCH_PIXELS]
                .iter()
                .map(|&v| v as u8)
                .collect();
            pipeline.apply_into(
                &bytes,
                patchdesc::preprocess::AugmentTag::IDENTITY,
                &mut x.data_mut()[slot * PATCH_PIXELS..(slot + 1) * PATCH_PIXELS],
            );
        }
        let d = model.describe(&x)?;
        let dim = d.shape()[1];
        descriptors.data_mut()[lo * dim..hi * dim].copy_from_slice(d.data());
        lo = hi;
    }

    match a.format.as_str() {
        "csv" => {
            let mut out = String::new();
            for line in metadata.lines() {
                out.push_str("# ");
                out.push_str(line);
                out.push('\n');
            }
            let dim = model.descriptor_len();
            for row in 0..n {
                let vals: Vec<String> = descriptors.data()[row * dim..(row + 1) * dim]
                    .iter()
                    .map(|v| v.to_string())
                    .collect();
                out.push_str(&vals.join(","));
                out.push('\n');
            }
            std::fs::write(&a.out, out)?;
        }
        "bin" => save_tensor(&a.out, "descriptors", &descriptors, &metadata)?,
        other => {
            return Err(Error::Arg(format!(
                "unknown descriptor format `{other}` (csv|bin)"
            )))
        }
    }
    println!("wrote {n} descriptors to {}", a.out.display());
    Ok(())
}

/// Loads descriptors from either the binary container or CSV.
fn load_descriptors(path: &Path) -> Result<Tensor<f32>> {
    let mut magic = [0u8; 8];
    {
        use std::io::Read;
        let mut f = std::fs::File::open(path)
            .map_err(|e| Error::Arg(format!("{}: {e}", path.display())))?;
        let _ = f.read(&mut magic)?;
    }
    if &magic == patchdesc::CONTAINER_MAGIC {
        let (_, tensor, _) = load_tensor(path)?;
        return Ok(tensor);
    }
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: std::result::Result<Vec<f32>, _> =
            line.split(',').map(|v| v.trim().parse::<f32>()).collect();
        rows.push(row.map_err(|_| {
            Error::Data(format!("{}: non-numeric descriptor entry", path.display()))
        })?);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!(
            "{}: no descriptor rows",
            path.display()
        )));
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Data(format!(
            "{}: ragged descriptor rows",
            path.display()
        )));
    }
    Tensor::from_vec(&[rows.len(), dim], rows.into_iter().flatten().collect())
}

pub fn cmd_match(a: &MatchArgs) -> Result<()> {
    let da = load_descriptors(&a.a)?;
    let db = load_descriptors(&a.b)?;
    if da.shape()[1] != db.shape()[1] {
        return Err(Error::Dim(format!(
            "descriptor lengths disagree: {} vs {}",
            da.shape()[1],
            db.shape()[1]
        )));
    }
    let (na, nb, dim) = (da.shape()[0], db.shape()[0], da.shape()[1]);
    let mut meta = RunMeta::new("match");
    meta.push("a", a.a.display().to_string());
    meta.push("b", a.b.display().to_string());
    meta.push("threshold", a.threshold.to_string());
    let mut out = String::new();
    for line in meta.render().lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("query,best,distance,matched\n");
    let mut matched = 0usize;
    for i in 0..na {
        let fa = &da.data()[i * dim..(i + 1) * dim];
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for j in 0..nb {
            let fb = &db.data()[j * dim..(j + 1) * dim];
            let d = pair_distance(fa, fb)? as f64;
            // Strict comparison keeps the lower index on ties.
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        let is_match = best_d <= a.threshold;
        matched += is_match as usize;
        out.push_str(&format!("{i},{best},{best_d},{}\n", is_match as u8));
    }
    std::fs::write(&a.out, out)?;
    println!("{matched}/{na} queries matched at threshold {}", a.threshold);
    Ok(())
}
