//! `prepare`: synthesize or ingest source pools, render the five-condition
//! dataset for all three roles, and write the audiogram catalog and target
//! scores next to it.

use std::fs;
use std::path::Path;

use hasa_core::audiogram::{generate_catalog, make_pattern, write_catalog_csv, Audiogram};
use hasa_core::error::{Error, Result};
use hasa_core::rng::split_seed;
use hasa_core::signal::{
    build_manifest, read_rir_pool, render_manifest, synthesize_source_pools, write_manifest_jsonl,
    CleanAsset, CorpusPools, DatasetManifest, NoiseAsset, RenderAssets, Role, SpectralSubtraction,
};
use hasa_core::targets::{
    import_scores, score_histogram, ComboKey, ScoreProvider, ScoreTable, SyntheticScores,
};

use crate::config::{RunConfig, TargetKind};
use crate::rundir::RunDir;

pub fn cmd_prepare(config: &RunConfig) -> Result<()> {
    let run = RunDir::create("prepare", config)?;
    // On failure, remove only the directories this run created.
    let data_existed = config.data_dir.exists();
    let asset_root = config.asset_root()?.to_path_buf();
    let asset_existed = asset_root.exists();

    let result = run.execute(|_| build_dataset(config));
    if result.is_err() {
        if !data_existed {
            let _ = fs::remove_dir_all(&config.data_dir);
        }
        if !asset_existed {
            let _ = fs::remove_dir_all(&asset_root);
        }
    }
    result
}

fn wav_pool(dir: &Path, label: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|_| {
        Error::MissingAssets(vec![format!("{label} pool directory: {}", dir.display())])
    })?;
    for entry in entries {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(".wav") {
            out.push((id.to_string(), name.clone()));
        }
    }
    out.sort();
    Ok(out)
}

/// Read pre-existing pools from `clean/`, `noise/`, and `rirs/` under the
/// asset root.
fn discover_pools(root: &Path) -> Result<CorpusPools> {
    let clean = wav_pool(&root.join("clean"), "clean")?
        .into_iter()
        .map(|(utterance_id, file)| CleanAsset {
            utterance_id,
            path: format!("clean/{file}"),
        })
        .collect::<Vec<_>>();
    let noise = wav_pool(&root.join("noise"), "noise")?
        .into_iter()
        .map(|(noise_id, file)| NoiseAsset {
            noise_id,
            path: format!("noise/{file}"),
        })
        .collect::<Vec<_>>();
    let mut rirs = read_rir_pool(&root.join("rirs"))?;
    for asset in &mut rirs {
        asset.path = format!("rirs/{}", asset.path);
    }
    let mut missing = Vec::new();
    if clean.is_empty() {
        missing.push(format!("clean pool is empty under {}", root.display()));
    }
    if noise.is_empty() {
        missing.push(format!("noise pool is empty under {}", root.display()));
    }
    if rirs.is_empty() {
        missing.push(format!("rir pool is empty under {}", root.display()));
    }
    if !missing.is_empty() {
        return Err(Error::MissingAssets(missing));
    }
    Ok(CorpusPools { clean, noise, rirs })
}

/// Assign clean utterances to roles, roughly 80/10/10, deterministically in
/// the seed and independent of input order.
fn assign_roles(clean: &[CleanAsset], seed: u64) -> Result<Vec<(Role, Vec<CleanAsset>)>> {
    let n = clean.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 clean utterances to fill train/validation/test roles, got {n}"
        )));
    }
    let mut order: Vec<&CleanAsset> = clean.iter().collect();
    order.sort_by_key(|a| {
        (
            split_seed(seed, &format!("prepare/role/{}", a.utterance_id)),
            a.utterance_id.clone(),
        )
    });
    let n_test = (n / 10).max(1);
    let n_val = (n / 10).max(1);
    let n_train = n - n_val - n_test;
    let slice = |range: std::ops::Range<usize>| order[range].iter().map(|a| (*a).clone()).collect();
    Ok(vec![
        (Role::Train, slice(0..n_train)),
        (Role::Validation, slice(n_train..n_train + n_val)),
        (Role::Test, slice(n_train + n_val..n)),
    ])
}

fn build_targets(
    config: &RunConfig,
    catalog: &[Audiogram],
    manifests: &[DatasetManifest],
) -> Result<ScoreTable> {
    let patterns: Vec<_> = catalog
        .iter()
        .map(|a| (a.id.clone(), make_pattern(a)))
        .collect();
    match config.targets.provider {
        TargetKind::Synthetic => {
            let provider = SyntheticScores {
                seed: config.targets.seed.unwrap_or(config.seed),
            };
            let mut table = ScoreTable::new();
            for manifest in manifests {
                for record in &manifest.records {
                    for (id, pattern) in &patterns {
                        let mut heard = record.clone();
                        heard.audiogram_id = id.clone();
                        let pair = provider.score(&heard, pattern)?;
                        table.insert(
                            ComboKey::new(&record.utterance_id, record.condition, id),
                            pair,
                        )?;
                    }
                }
            }
            Ok(table)
        }
        TargetKind::Imported => {
            let path = config.targets.path.as_ref().expect("checked at validation");
            let table = import_scores(path)?;
            // Training may pair any catalog audiogram with any record, so the
            // imported table must cover the full cross product.
            let mut needed = Vec::new();
            for manifest in manifests {
                for record in &manifest.records {
                    for (id, _) in &patterns {
                        needed.push(ComboKey::new(&record.utterance_id, record.condition, id));
                    }
                }
            }
            table.check_coverage(needed.iter())?;
            Ok(table)
        }
    }
}

fn build_dataset(config: &RunConfig) -> Result<Vec<String>> {
    let asset_root = config.asset_root()?;
    let pools = match &config.corpus {
        Some(section) => synthesize_source_pools(asset_root, &section.to_spec(config.seed))?,
        None => discover_pools(asset_root)?,
    };
    let roles = assign_roles(&pools.clean, config.seed)?;

    fs::create_dir_all(&config.data_dir)?;
    let assets = RenderAssets::load(asset_root, &pools.noise, &pools.rirs)?;
    let enhancer = SpectralSubtraction::default();

    let mut manifests = Vec::new();
    let mut artifacts = Vec::new();
    for (role, subset) in &roles {
        let recipe = config.dataset.recipe.recipe_for(*role);
        let manifest = build_manifest(
            subset,
            &pools.noise,
            &pools.rirs,
            &recipe,
            config.seed,
            asset_root,
        )?;
        render_manifest(&manifest, asset_root, &assets, &config.data_dir, &enhancer)?;
        let path = config.manifest_path(*role);
        write_manifest_jsonl(&manifest, &path)?;
        artifacts.push(path.display().to_string());
        manifests.push(manifest);
    }

    let catalog = generate_catalog(config.seed);
    write_catalog_csv(&catalog, fs::File::create(config.catalog_path())?)?;
    artifacts.push(config.catalog_path().display().to_string());

    let table = build_targets(config, &catalog, &manifests)?;
    table.write_csv(&config.scores_path())?;
    artifacts.push(config.scores_path().display().to_string());

    let histogram_path = config.data_dir.join("score_histogram.csv");
    fs::write(&histogram_path, score_histogram(&table)?.to_csv())?;
    artifacts.push(histogram_path.display().to_string());

    let n_records: usize = manifests.iter().map(|m| m.records.len()).sum();
    println!(
        "prepared {} records ({} clean utterances x 5 conditions) and {} target scores in {}",
        n_records,
        pools.clean.len(),
        table.len(),
        config.data_dir.display()
    );
    Ok(artifacts)
}
