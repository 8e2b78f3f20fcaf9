//! Subcommand implementations.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use entnorm::corpus::{
    load_dictionary, load_mentions, merge_train_to_dictionary, normalize_text, split_composite,
    SubstitutionMap,
};
use entnorm::dense::{load_checkpoint, save_checkpoint, EncoderConfig};
use entnorm::eval::{evaluate, rank_component, ScoreMode};
use entnorm::retrieval::SynonymIndex;
use entnorm::sparse::{fit_tfidf, TfIdfConfig, TfIdfModel};
use entnorm::synth;
use entnorm::training::{self, LossKind, TrainConfig};

use crate::config::{require_exists, FileConfig};
use crate::{
    CandidatesArgs, CliError, CommonMaps, EvalArgs, FitSparseArgs, GensynthArgs, PredictArgs,
    TrainArgs,
};

fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoint-epoch-{epoch:03}.ckpt")
}

fn load_maps(
    maps: &CommonMaps,
    file: &FileConfig,
) -> Result<(SubstitutionMap, SubstitutionMap), CliError> {
    let load = |flag: &Option<PathBuf>, key: &str| -> Result<SubstitutionMap, CliError> {
        match file.resolve_path(flag.clone(), key) {
            None => Ok(SubstitutionMap::default()),
            Some(path) => {
                require_exists(&path, key)?;
                Ok(SubstitutionMap::load(&path)?)
            }
        }
    };
    Ok((load(&maps.abbrev, "abbrev")?, load(&maps.spelling, "spelling")?))
}

fn sibling_tfidf(checkpoint: &Path) -> PathBuf {
    checkpoint
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("tfidf.model")
}

fn parse_ks(spec: &str) -> Result<Vec<usize>, CliError> {
    let ks: Vec<usize> = spec
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("bad --ks value {spec:?}")))?;
    if ks.is_empty() || ks.iter().any(|&k| k == 0) {
        return Err(CliError::Usage("--ks must list positive integers".into()));
    }
    Ok(ks)
}

fn parse_score(spec: &str) -> Result<ScoreMode, CliError> {
    ScoreMode::from_str(spec).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let dict_path = file.require_input(args.dict, "dict")?;
    let train_path = file.require_input(args.train, "train")?;
    let out_dir = file
        .resolve_path(args.out, "out")
        .ok_or_else(|| CliError::Usage("missing required setting --out".into()))?;
    let (abbrev, spelling) = load_maps(&args.maps, &file)?;

    let train_cfg = TrainConfig {
        k: file.resolve(args.k, "k", 20)?,
        alpha: file.resolve(args.alpha, "alpha", 0.5)?,
        epochs: file.resolve(args.epochs, "epochs", 10)?,
        batch_size: file.resolve(args.batch_size, "batch_size", 16)?,
        learning_rate: file.resolve(args.learning_rate, "learning_rate", 1e-5)?,
        weight_decay: file.resolve(args.weight_decay, "weight_decay", 1e-2)?,
        loss: {
            let name = file.resolve(args.loss, "loss", "mml".to_string())?;
            LossKind::from_str(&name).map_err(|e| CliError::Usage(e.to_string()))?
        },
        seed: file.resolve(args.seed, "seed", 42)?,
    };
    train_cfg
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let encoder_cfg = EncoderConfig {
        h: file.resolve(args.h, "h", 64)?,
        buckets: file.resolve(args.buckets, "buckets", 65536)?,
        ngram_order: file.resolve(None, "ngram_order", 3)?,
        seed: train_cfg.seed,
        max_chars: file.resolve(args.max_chars, "max_chars", 100)?,
    };
    encoder_cfg
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let sparse_cfg = TfIdfConfig {
        orders: vec![1, 2],
        l2_normalize: file.resolve(None, "sparse_l2_normalize", true)?,
    };

    let base_dict = load_dictionary(&dict_path)?;
    let mentions = load_mentions(&train_path, &abbrev, &spelling)?;
    if mentions.records.is_empty() {
        return Err(CliError::Runtime(format!(
            "no usable training mentions in {}",
            train_path.display()
        )));
    }
    if mentions.skipped_empty > 0 {
        eprintln!(
            "skipped {} mention(s) that normalized to the empty string",
            mentions.skipped_empty
        );
    }
    let dict = merge_train_to_dictionary(&base_dict, &mentions.records);
    let tfidf = fit_tfidf(&dict, &sparse_cfg)?;

    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    tfidf.save(&out_dir.join("tfidf.model"))?;

    let outcome = training::train(
        &dict,
        &tfidf,
        &encoder_cfg,
        &mentions.records,
        &train_cfg,
        |epoch, params, lambda| {
            save_checkpoint(&out_dir.join(checkpoint_name(epoch)), &encoder_cfg, params, lambda)
        },
    )?;

    let mut log = String::new();
    for record in &outcome.metrics {
        log.push_str(&serde_json::to_string(record).expect("metrics serialize"));
        log.push('\n');
    }
    fs::write(out_dir.join("metrics.jsonl"), log)
        .map_err(|e| CliError::Runtime(format!("cannot write metrics log: {e}")))?;

    println!(
        "merged dictionary: {} entries ({} from training mentions)",
        dict.len(),
        dict.len() - base_dict.len()
    );
    println!(
        "trained {} epoch(s); wrote {} checkpoint(s), tfidf.model, metrics.jsonl to {}",
        train_cfg.epochs,
        train_cfg.epochs + 1,
        out_dir.display()
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    require_exists(&args.checkpoint, "checkpoint")?;
    let dict_path = file.require_input(args.dict, "dict")?;
    let test_path = file.require_input(args.test, "test")?;
    let tfidf_path = args.tfidf.unwrap_or_else(|| sibling_tfidf(&args.checkpoint));
    require_exists(&tfidf_path, "tfidf")?;
    let ks = parse_ks(&args.ks)?;
    let mode = parse_score(&args.score)?;
    let (abbrev, spelling) = load_maps(&args.maps, &file)?;

    let (encoder_cfg, params, lambda) = load_checkpoint(&args.checkpoint)?;
    let tfidf = TfIdfModel::load(&tfidf_path)?;
    let dict = load_dictionary(&dict_path)?;
    let mentions = load_mentions(&test_path, &abbrev, &spelling)?;
    let report = evaluate(
        &dict,
        &tfidf,
        &encoder_cfg,
        &params,
        lambda,
        &mentions.records,
        &ks,
        mode,
    )?;
    if let Some(path) = &args.failures {
        fs::write(path, report.failures_tsv())
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    println!("{}", report.to_json());
    Ok(())
}

pub fn predict(args: PredictArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    require_exists(&args.checkpoint, "checkpoint")?;
    let dict_path = file.require_input(args.dict, "dict")?;
    let tfidf_path = args.tfidf.unwrap_or_else(|| sibling_tfidf(&args.checkpoint));
    require_exists(&tfidf_path, "tfidf")?;
    let mode = parse_score(&args.score)?;
    if args.k == 0 {
        return Err(CliError::Usage("--k must be >= 1".into()));
    }
    let (abbrev, spelling) = load_maps(&args.maps, &file)?;

    let normalized = normalize_text(&args.mention, &abbrev, &spelling)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let components = split_composite(&normalized);

    let (encoder_cfg, params, lambda) = load_checkpoint(&args.checkpoint)?;
    let tfidf = TfIdfModel::load(&tfidf_path)?;
    let dict = load_dictionary(&dict_path)?;
    let index = SynonymIndex::build(&dict, &tfidf, &encoder_cfg, &params, lambda)?;

    let no_gold = BTreeSet::new();
    for text in &components {
        let ranked = rank_component(&index, text, &no_gold, args.k, mode);
        for (rank, slot) in ranked.ranked.iter().enumerate() {
            println!(
                "{}\t{}\t{}\t{}\t{}",
                text,
                rank + 1,
                slot.cui,
                slot.synonym,
                slot.score
            );
        }
    }
    Ok(())
}

pub fn candidates(args: CandidatesArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    require_exists(&args.checkpoint_dir, "checkpoint-dir")?;
    let dict_path = file.require_input(args.dict, "dict")?;
    let mentions_path = file.require_input(args.mentions, "mentions")?;
    let tfidf_path = args
        .tfidf
        .unwrap_or_else(|| args.checkpoint_dir.join("tfidf.model"));
    require_exists(&tfidf_path, "tfidf")?;
    let k = file.resolve(args.k, "k", 20)?;
    let alpha = file.resolve(args.alpha, "alpha", 0.5)?;
    if k == 0 {
        return Err(CliError::Usage("--k must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CliError::Usage("--alpha must be in [0, 1]".into()));
    }
    let (abbrev, spelling) = load_maps(&args.maps, &file)?;

    let mut checkpoints: Vec<(usize, PathBuf)> = fs::read_dir(&args.checkpoint_dir)
        .map_err(|e| {
            CliError::Runtime(format!("cannot read {}: {e}", args.checkpoint_dir.display()))
        })?
        .filter_map(|entry| {
            let path = entry.ok()?.path();
            let name = path.file_name()?.to_str()?;
            let epoch = name
                .strip_prefix("checkpoint-epoch-")?
                .strip_suffix(".ckpt")?
                .parse::<usize>()
                .ok()?;
            Some((epoch, path))
        })
        .collect();
    checkpoints.sort_by_key(|(epoch, _)| *epoch);
    if checkpoints.is_empty() {
        return Err(CliError::Runtime(format!(
            "no checkpoint-epoch-*.ckpt files in {}",
            args.checkpoint_dir.display()
        )));
    }

    let tfidf = TfIdfModel::load(&tfidf_path)?;
    let dict = load_dictionary(&dict_path)?;
    let mentions = load_mentions(&mentions_path, &abbrev, &spelling)?;

    println!("epoch\tmention\trank\tsynonym\tcui\tis_positive\tsparse_score\tdense_score");
    for (epoch, path) in &checkpoints {
        let (encoder_cfg, params, lambda) = load_checkpoint(path)?;
        let index = SynonymIndex::build(&dict, &tfidf, &encoder_cfg, &params, lambda)?;
        for record in &mentions.records {
            for comp in &record.components {
                let set = index.compose(&comp.text, k, alpha);
                for (rank, cand) in set.candidates.iter().enumerate() {
                    let entry = dict.entry(cand.synonym_id);
                    let positive = comp.gold.contains(&entry.cui);
                    println!(
                        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                        epoch,
                        comp.text,
                        rank + 1,
                        entry.name,
                        entry.cui,
                        positive,
                        cand.sparse_score,
                        cand.dense_score
                    );
                }
            }
        }
    }
    Ok(())
}

pub fn gensynth(args: GensynthArgs) -> Result<(), CliError> {
    let variation =
        synth::parse_variation(&args.variation).map_err(|e| CliError::Usage(e.to_string()))?;
    let spec = synth::SynthSpec {
        seed: args.seed,
        n_cuis: args.cuis,
        syns_per_cui: args.syns_per_cui,
        n_train: args.train,
        n_test: args.test,
        variation,
        group_size: args.group_size,
        hard_test_fraction: args.hard_fraction,
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let data = synth::generate(&spec)?;
    data.write_dir(&args.out)?;
    println!(
        "wrote dict.txt ({} entries), train.txt ({} mentions), test.txt ({} mentions) to {}",
        data.dictionary.len(),
        data.train.len(),
        data.test.len(),
        args.out.display()
    );
    Ok(())
}

pub fn fit_sparse(args: FitSparseArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let dict_path = file.require_input(args.dict, "dict")?;
    let l2_from_config: bool = file.resolve(None, "sparse_l2_normalize", true)?;
    let cfg = TfIdfConfig {
        orders: vec![1, 2],
        l2_normalize: !args.no_l2_norm && l2_from_config,
    };
    let dict = load_dictionary(&dict_path)?;
    let model = fit_tfidf(&dict, &cfg)?;
    model.save(&args.out)?;
    println!(
        "fit tf-idf over {} entries: {} features -> {}",
        dict.len(),
        model.n_features(),
        args.out.display()
    );
    Ok(())
}
