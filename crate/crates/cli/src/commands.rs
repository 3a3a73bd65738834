use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use susl_core::checkpoint;
use susl_core::datasets::{write_bundle, DatasetBundle};
use susl_core::evaluation::{evaluate, export_embeddings, sample_class, write_embeddings, EvalReport};
use susl_core::hpsearch::{run_search, RandomSampler, SearchOptions, SearchSpace, HALVING_EPOCHS};
use susl_core::model::Parameters;
use susl_core::trainer::{history_csv, TrainError, Trainer};

use crate::error::CliError;
use crate::spec::{load_dataset, ExperimentSpec, SpecArgs};

/// The resolved spec, or `None` after printing it for `--print-config`.
fn resolve(args: &SpecArgs, base: Option<&str>) -> Result<Option<ExperimentSpec>, CliError> {
    let spec = args.resolve(base)?;
    if args.print_config {
        print!("{}", spec.to_toml());
        return Ok(None);
    }
    Ok(Some(spec))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn output_dir(spec: &ExperimentSpec) -> Result<&Path, CliError> {
    fs::create_dir_all(&spec.output_dir).map_err(|e| CliError::Data(format!("{}: {e}", spec.output_dir.display())))?;
    Ok(&spec.output_dir)
}

/// Training-side commands never look at the test split.
fn load_without_test(spec: &ExperimentSpec) -> Result<DatasetBundle, CliError> {
    let mut bundle = load_dataset(spec)?;
    bundle.test.clear();
    Ok(bundle)
}

fn load_checkpoint(path: &Path, args: &SpecArgs) -> Result<Option<(Parameters, ExperimentSpec)>, CliError> {
    let (params, meta) = checkpoint::load(path)?;
    Ok(resolve(args, Some(&meta))?.map(|spec| (params, spec)))
}

fn check_compatible(params: &Parameters, bundle: &DatasetBundle) -> Result<(), CliError> {
    let c = params.config();
    if (c.channels, c.length, c.n_known_classes) != (bundle.channels, bundle.length, bundle.n_classes()) {
        return Err(CliError::Usage(format!(
            "checkpoint expects {} channel(s) x {} steps and {} classes; dataset has {} x {} and {}",
            c.channels,
            c.length,
            c.n_known_classes,
            bundle.channels,
            bundle.length,
            bundle.n_classes()
        )));
    }
    Ok(())
}

pub fn ingest(args: &SpecArgs) -> Result<(), CliError> {
    let Some(mut spec) = resolve(args, None)? else { return Ok(()) };
    // Bundles hold raw values; normalization happens when they are used.
    spec.dataset.znormalize = false;
    let bundle = load_dataset(&spec)?;
    let out = output_dir(&spec)?;
    write_bundle(&bundle, out)?;
    write(out, "spec.toml", &spec.to_toml())?;
    println!("{}: {} channel(s) x {} steps", bundle.name, bundle.channels, bundle.length);
    println!("{:<20} {:>8} {:>8}", "class", "train", "test");
    for ((name, tr), te) in bundle.class_names.iter().zip(bundle.train_counts()).zip(bundle.test_counts()) {
        println!("{name:<20} {tr:>8} {te:>8}");
    }
    println!("{:<20} {:>8} {:>8}", "total", bundle.train.len(), bundle.test.len());
    Ok(())
}

pub fn train(args: &SpecArgs) -> Result<(), CliError> {
    let Some(spec) = resolve(args, None)? else { return Ok(()) };
    let bundle = load_without_test(&spec)?;
    let regime = spec.regime_spec(&bundle.class_names)?;
    let model = spec.model_config(&bundle);
    let meta = spec.to_toml();
    let mut trainer = Trainer::new(&bundle, &regime, &model, &spec.train_config())?;
    let out = output_dir(&spec)?;
    write(out, "spec.toml", &meta)?;
    while !trainer.is_done() {
        if let Err(e) = trainer.run_epoch() {
            write(out, "history.csv", &history_csv(trainer.history()))?;
            if let TrainError::Diverged { last_good: Some(p), .. } = &e {
                checkpoint::save(&out.join("last_good.ckpt"), p, &meta)?;
            }
            return Err(e.into());
        }
    }
    let result = trainer.finish();
    checkpoint::save(&out.join("model.ckpt"), &result.best_params, &meta)?;
    checkpoint::save(&out.join("final.ckpt"), &result.final_params, &meta)?;
    write(out, "history.csv", &history_csv(&result.history))?;
    println!(
        "best epoch {} of {}: validation accuracy {:.4}",
        result.best_epoch,
        result.history.len(),
        result.best_val_accuracy
    );
    Ok(())
}

pub fn eval(path: &Path, args: &SpecArgs) -> Result<(), CliError> {
    let Some((params, spec)) = load_checkpoint(path, args)? else { return Ok(()) };
    let bundle = load_dataset(&spec)?;
    check_compatible(&params, &bundle)?;
    let regime = spec.regime_spec(&bundle.class_names)?;
    let report = evaluate(&params, &bundle.test, &bundle.class_names, &regime.anchored_classes(bundle.n_classes()))?;
    let out = output_dir(&spec)?;
    let text = report.render_text();
    write(out, "eval_report.txt", &text)?;
    write(out, "eval_report.json", &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    write(out, "eval_confusion.csv", &report.confusion_csv())?;
    write(out, "eval_metrics.csv", &report.metrics_csv())?;
    write(out, "eval_spec.toml", &spec.to_toml())?;
    print!("{text}");
    Ok(())
}

pub fn search(args: &SpecArgs) -> Result<(), CliError> {
    let Some(spec) = resolve(args, None)? else { return Ok(()) };
    let bundle = load_without_test(&spec)?;
    let regime = spec.regime_spec(&bundle.class_names)?;
    let options = SearchOptions {
        n_trials: spec.search.n_trials,
        seed: spec.seed,
        variant: spec.model.variant,
        epochs: spec.train.epochs,
        batch_size: spec.train.batch_size,
        prune_at: if spec.search.prune { HALVING_EPOCHS.to_vec() } else { vec![] },
    };
    let mut sampler = RandomSampler { space: SearchSpace::default(), seed: spec.seed };
    let outcome = run_search(&bundle, &regime, &mut sampler, &options, None)?;
    let out = output_dir(&spec)?;
    write(out, "spec.toml", &spec.to_toml())?;
    write(out, "trials.jsonl", &outcome.log_lines())?;

    // The winner as a plain training spec: `susl train --config` on it
    // reruns the trial.
    let best = outcome.best();
    let mut winner = spec.clone();
    let c = &best.config;
    winner.seed = best.seed;
    winner.regime.n_augmented = c.n_augmented;
    winner.model.latent_dim = c.latent_dim;
    winner.model.layers = c.layers;
    winner.model.filters = c.filters;
    winner.model.units = c.units;
    winner.model.kernel_size = c.kernel_size;
    winner.train.lr = c.lr;
    winner.train.alpha = c.alpha;
    winner.train.gamma = c.gamma;
    winner.train.weight_decay = c.weight_decay;
    winner.train.clip = c.clip;
    let meta = winner.to_toml();
    write(out, "best_spec.toml", &meta)?;
    write(out, "best_history.csv", &history_csv(&best.history))?;
    checkpoint::save(&out.join("best.ckpt"), &outcome.best_params, &meta)?;

    println!("{:>5} {:>12} {:>10}  status", "trial", "val_acc", "lr");
    for t in &outcome.ranked {
        let acc = t.val_accuracy.map_or("-".to_string(), |a| format!("{a:.4}"));
        println!("{:>5} {acc:>12} {:>10.3e}  {}", t.trial, t.config.lr, t.status);
    }
    Ok(())
}

pub fn embed(path: &Path, args: &SpecArgs) -> Result<(), CliError> {
    let Some((params, spec)) = load_checkpoint(path, args)? else { return Ok(()) };
    let bundle = load_without_test(&spec)?;
    check_compatible(&params, &bundle)?;
    let embeddings = export_embeddings(&params, &bundle.train)?;
    let out = output_dir(&spec)?;
    write_embeddings(&out.join("embeddings.csv"), &embeddings, params.config().latent_dim)?;
    write(out, "embed_spec.toml", &spec.to_toml())?;
    println!("{} embeddings written to {}", embeddings.len(), out.join("embeddings.csv").display());
    Ok(())
}

pub fn sample(path: &Path, class: usize, count: usize, args: &SpecArgs) -> Result<(), CliError> {
    let Some((params, spec)) = load_checkpoint(path, args)? else { return Ok(()) };
    let cfg = params.config().clone();
    if class >= cfg.n_classes() {
        return Err(CliError::Usage(format!("class slot {class} is out of range; the model has {}", cfg.n_classes())));
    }
    if count == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    let draws = sample_class(&params, class, count, spec.seed)?;
    let mut csv = String::from("sample,channel");
    for t in 0..cfg.length {
        write!(csv, ",t{t}").unwrap();
    }
    csv.push('\n');
    for (row, values) in draws.data().chunks(cfg.length).enumerate() {
        write!(csv, "{},{}", row / cfg.channels, row % cfg.channels).unwrap();
        for v in values {
            write!(csv, ",{v}").unwrap();
        }
        csv.push('\n');
    }
    let out = output_dir(&spec)?;
    let path = write(out, "samples.csv", &csv)?;
    write(out, "sample_spec.toml", &spec.to_toml())?;
    println!("{count} draws from slot {class} written to {}", path.display());
    Ok(())
}

fn read_run(dir: &Path) -> Result<(ExperimentSpec, EvalReport), CliError> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    };
    let spec = toml::from_str(&read("eval_spec.toml")?)
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.join("eval_spec.toml").display())))?;
    let report = serde_json::from_str(&read("eval_report.json")?)
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.join("eval_report.json").display())))?;
    Ok((spec, report))
}

/// One row per eval run: dataset, regime, labels, hidden classes,
/// augmented slots, and the three scores in percent.
pub fn render_report(runs: &[(ExperimentSpec, EvalReport)]) -> String {
    let mut out = format!(
        "{:<20} {:<5} {:>7} {:<16} {:>4} {:>9} {:>9} {:>9}\n",
        "dataset", "regime", "labels", "hidden", "C_a", "accuracy", "macro F1", "wgt F1"
    );
    for (spec, report) in runs {
        let dataset = spec
            .dataset
            .path
            .file_name()
            .map_or_else(|| spec.dataset.path.display().to_string(), |n| n.to_string_lossy().into_owned());
        let hidden =
            if spec.regime.hidden_classes.is_empty() { "-".into() } else { spec.regime.hidden_classes.join(",") };
        writeln!(
            out,
            "{dataset:<20} {:<5} {:>6.0}% {hidden:<16} {:>4} {:>9.2} {:>9.2} {:>9.2}",
            spec.regime_label(),
            spec.regime.labeled_fraction * 100.0,
            spec.regime.n_augmented,
            report.accuracy * 100.0,
            report.macro_f1 * 100.0,
            report.weighted_f1 * 100.0,
        )
        .unwrap();
    }
    out
}

pub fn report(dirs: &[PathBuf], output: Option<&Path>) -> Result<(), CliError> {
    let runs = dirs.iter().map(|d| read_run(d)).collect::<Result<Vec<_>, _>>()?;
    let table = render_report(&runs);
    if let Some(path) = output {
        fs::write(path, &table).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    print!("{table}");
    Ok(())
}
