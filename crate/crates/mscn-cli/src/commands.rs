//! Subcommand implementations. Every command writes a `run.json` with the
//! fully resolved configuration next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use mscn_core::expansion::progressive_train;
use mscn_core::geometry::{load_manifest, save_manifest, save_xyz, DatasetManifest, Transform};
use mscn_core::harness::{
    cross_resolution_eval, evaluate, generate_dataset, load_dataset, load_model,
    perturbation_sweep, resolution_variants, save_baseline, train_baseline, train_source,
    write_csv, SweepGrid,
};
use mscn_core::{Error, Result};

use crate::config::RunConfig;
use crate::plots;

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_run_record(command: &str, config: &RunConfig, out: &Path) -> Result<()> {
    let record = json!({
        "command": command,
        "crate_version": env!("CARGO_PKG_VERSION"),
        "seed": config.seed,
        "config": config,
    });
    write_json(&record, &out.join("run.json"))
}

/// Synthesizes a train and a test split under `out/`.
pub fn gen_data(config: &RunConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let params = config.generator_params();
    let train_dir = out.join("train");
    let test_dir = out.join("test");
    ensure_dir(&train_dir)?;
    ensure_dir(&test_dir)?;
    generate_dataset(&train_dir, config.per_class_train, &params, config.seed)?;
    // The test split draws from a disjoint seed range.
    let test_seed = config.seed.wrapping_add(1_000_000);
    generate_dataset(&test_dir, config.per_class_test, &params, test_seed)?;
    write_run_record("gen-data", config, out)?;
    println!(
        "wrote {} train and {} test clouds per class under {}",
        config.per_class_train,
        config.per_class_test,
        out.display()
    );
    Ok(())
}

/// Supervised training of either classifier; checkpoint under `out/checkpoint`.
pub fn train(config: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let dataset = load_dataset(data)?;
    let tc = config.train_config();
    let ckpt = out.join("checkpoint");
    let records = match config.model.as_str() {
        "mscn" => {
            let net = config.network_config()?;
            let (params, records) = train_source(&dataset, &net, &tc)?;
            mscn_core::checkpoint::save_mscn(&ckpt, &params, &[config.seed])?;
            records
        }
        "baseline" => {
            let (params, records) =
                train_baseline(&dataset, config.num_classes, config.normalize_baseline, &tc)?;
            save_baseline(&ckpt, &params, &[config.seed])?;
            records
        }
        other => return Err(Error::Validation(format!("unknown model {other:?}"))),
    };
    write_json(&records, &out.join("epochs.json"))?;
    write_run_record("train", config, out)?;
    let last = records.last().unwrap();
    println!(
        "trained {} for {} epochs: loss {:.4}, train acc {:.3}",
        config.model,
        records.len(),
        last.loss,
        last.accuracy
    );
    Ok(())
}

/// Progressive domain expansion starting from a pretrained checkpoint.
pub fn expand_train(config: &RunConfig, data: &Path, pretrained: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let source = load_dataset(data)?;
    let manifest = load_manifest(data)?;
    let (params, meta) = mscn_core::checkpoint::load_mscn(pretrained)?;
    let ec = config.expansion_config();
    let (expanded, _proj, _gens, state) = progressive_train(&source, &params, &ec)?;

    let mut seeds = meta.seed_history.clone();
    seeds.push(config.seed);
    mscn_core::checkpoint::save_mscn(&out.join("checkpoint"), &expanded, &seeds)?;

    // Pool snapshots: one dataset directory per cycle.
    let pools_dir = out.join("pools");
    for (k, pool) in state.pools.iter().enumerate() {
        let dir = pools_dir.join(format!("cycle_{:02}", k + 1));
        ensure_dir(&dir)?;
        let mut entries = Vec::with_capacity(pool.len());
        for (i, cloud) in pool.iter().enumerate() {
            let class = cloud.label.unwrap_or(0);
            let name = PathBuf::from(format!(
                "{}_{i:04}.xyz",
                manifest.class_names.get(class).map(String::as_str).unwrap_or("cloud")
            ));
            save_xyz(cloud, dir.join(&name))?;
            entries.push((name, class));
        }
        let pool_manifest = DatasetManifest {
            entries,
            class_names: manifest.class_names.clone(),
            seed: config.seed,
            generator_params: manifest.generator_params.clone(),
        };
        save_manifest(&pool_manifest, dir.join("manifest.json"))?;
    }

    let summary = json!({
        "cycles": state.cycle,
        "model_epochs_run": state.model_epochs_run,
        "encoder_hash": state.encoder_hash,
        "pool_sizes": state.pools.iter().map(|p| p.len()).collect::<Vec<_>>(),
        "history": state.history,
    });
    write_json(&summary, &out.join("expansion.json"))?;

    let mut curves = String::from("cycle,generator_loss,model_loss,model_accuracy\n");
    for r in &state.history {
        curves.push_str(&format!(
            "{},{},{},{}\n",
            r.cycle, r.generator_loss, r.model_loss, r.model_accuracy
        ));
    }
    let curves_path = out.join("loss_curves.csv");
    fs::write(&curves_path, curves).map_err(|e| Error::io(curves_path.display().to_string(), e))?;
    write_run_record("expand-train", config, out)?;
    println!(
        "completed {} model epochs across {} cycles (encoder {})",
        state.model_epochs_run, state.cycle, state.encoder_hash
    );
    Ok(())
}

/// Single evaluation, optionally under one perturbation.
pub fn eval(
    config: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    perturb: Option<Transform>,
    out: &Path,
) -> Result<()> {
    ensure_dir(out)?;
    let model = load_model(checkpoint)?;
    let clouds = load_dataset(data)?;
    let outcome = evaluate(&model, &clouds, perturb.as_ref(), "eval", config.seed)?;
    write_csv(std::slice::from_ref(&outcome.row), &out.join("metrics.csv"))?;
    write_run_record("eval", config, out)?;
    println!(
        "accuracy {:.4} ({}), latency {:.2} ms/cloud",
        outcome.row.accuracy, outcome.row.transform, outcome.row.latency_ms
    );
    Ok(())
}

/// Accuracy over a perturbation grid; CSV under `out/`.
pub fn sweep(config: &RunConfig, checkpoint: &Path, data: &Path, kind: &str, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let model = load_model(checkpoint)?;
    let clouds = load_dataset(data)?;
    let grid = match kind {
        "rotation" => SweepGrid::rotation_default(config.seed),
        "shift" => SweepGrid::shift_default(config.seed),
        "scale" => SweepGrid::scale_default(config.seed),
        other => {
            return Err(Error::Validation(format!(
                "unknown sweep kind {other:?} (expected rotation, shift or scale)"
            )))
        }
    };
    let outcomes = perturbation_sweep(&model, &clouds, &grid, grid.name())?;
    let rows: Vec<_> = outcomes.into_iter().map(|o| o.row).collect();
    write_csv(&rows, &out.join(format!("sweep_{}.csv", grid.name())))?;
    write_run_record("sweep", config, out)?;
    for r in &rows {
        println!("{} {:>10.4}: accuracy {:.4}", grid.name(), r.param, r.accuracy);
    }
    Ok(())
}

/// Full/quarter-points/half-channels evaluation of one checkpoint.
pub fn cross_res(config: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let model = load_model(checkpoint)?;
    let clouds = load_dataset(data)?;
    let manifest = load_manifest(data)?;
    let variants = resolution_variants(&clouds, manifest.generator_params.channel_count, config.seed)?;
    let results = cross_resolution_eval(&model, &variants, config.seed)?;
    let rows: Vec<_> = results.iter().map(|(o, _)| o.row.clone()).collect();
    write_csv(&rows, &out.join("cross_res.csv"))?;
    write_run_record("cross-res", config, out)?;
    for (outcome, drop) in &results {
        println!(
            "{:<24} accuracy {:.4} (drop {:.4})",
            outcome.row.scenario, outcome.row.accuracy, drop
        );
    }
    Ok(())
}

/// Renders a metrics CSV as an SVG line plot.
pub fn export_plots(csv: &Path, out: &Path, title: &str) -> Result<()> {
    let rows = mscn_core::harness::read_csv(csv)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    plots::export(&rows, title, out)?;
    println!("wrote {}", out.display());
    Ok(())
}
