use std::path::{Path, PathBuf};

use log::info;
use palmnet::classifiers::SvmConfig;
use palmnet::dataset::{generate_dataset, load_dataset, Dataset, GenerateConfig, SampleCounts};
use palmnet::error::Error;
use palmnet::eval::{config_hash, sha256_hex, EvaluationReport};
use palmnet::gradsuite::run_suite;
use palmnet::landmarks::{write_landmark_csv, CoordSpace, LandmarkRow};
use palmnet::nets::{BackboneConfig, Model};
use palmnet::pipeline::{describe_samples, make_split, EvalSet, SplitKind, DEFAULT_FIRSTK};
use palmnet::tps;
use palmnet::train::{
    prepare_input56, stage1_train_localizer, train_strategy, ExperimentConfig, Stage1Config,
    Strategy, RECIPE_AT_FROM, RECIPE_EPOCHS,
};
use ndgrad::RngState;
use serde::Serialize;

use crate::{
    manifest_path, CliError, EvalArgs, ExtractRoiArgs, GradcheckArgs, GridCell, MatcherArgs,
    ReportArgs, SplitArgs, StrategyGrid, SynthArgs, TrainArgs, TrainLocalizerArgs,
    RESOLVED_CONFIG,
};

type Result<T> = std::result::Result<T, CliError>;

#[derive(Serialize)]
struct Resolved<'a, T> {
    command: &'a str,
    threads: Option<usize>,
    #[serde(flatten)]
    config: &'a T,
}

fn write_resolved<T: Serialize>(dir: &Path, command: &str, threads: Option<usize>, config: &T) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let r = Resolved {
        command,
        threads,
        config,
    };
    std::fs::write(dir.join(RESOLVED_CONFIG), serde_json::to_string_pretty(&r)?)?;
    Ok(())
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    Ok(Model::<f32>::load(path)?)
}

fn load(dataset: &Path) -> Result<Dataset> {
    Ok(load_dataset(&manifest_path(dataset))?)
}

pub fn synth(a: &SynthArgs, threads: Option<usize>) -> Result<()> {
    if a.min_side == 0 || a.min_side > a.max_side {
        return Err(CliError::Usage(format!(
            "need 0 < --min-side <= --max-side, got {} and {}",
            a.min_side, a.max_side
        )));
    }
    let mut cfg = GenerateConfig::new(a.palms, a.seed);
    cfg.samples = match a.fixed_samples {
        Some(n) => SampleCounts::Fixed(n),
        None => SampleCounts::Binomial {
            mean: a.mean_samples,
        },
    };
    cfg.ranges.side = (a.min_side, a.max_side);
    cfg.grayscale = a.grayscale;
    let manifest = generate_dataset(&cfg, &a.out)?;
    write_resolved(&a.out, "synth", threads, a)?;
    println!(
        "{} images of {} palms in {}",
        manifest.rows.len(),
        a.palms,
        a.out.display()
    );
    Ok(())
}

pub fn train_localizer(a: &TrainLocalizerArgs, threads: Option<usize>) -> Result<()> {
    let ds = load(&a.dataset)?;
    let mut cfg = Stage1Config::new(a.seed, a.widths);
    cfg.epochs_a = a.epochs_a;
    cfg.epochs_ab = a.epochs_ab;
    cfg.batch = a.batch;
    cfg.micro_batch = a.micro_batch;
    cfg.lr = a.lr;
    cfg.holdout_fraction = a.holdout;
    cfg.random_rotations = a.rotations;
    let outcome = stage1_train_localizer(&ds.samples, &cfg)?;
    std::fs::create_dir_all(&a.out)?;
    outcome.model.save(&a.out.join("localizer.palmw"))?;
    outcome.log.write_csv(&a.out.join("train_log.csv"))?;
    let nme = serde_json::json!({
        "initial_nme": outcome.initial_nme,
        "final_nme": outcome.final_nme,
        "holdout_palms": outcome.holdout_palms,
    });
    std::fs::write(a.out.join("nme.json"), serde_json::to_string_pretty(&nme)?)?;
    write_resolved(&a.out, "train-localizer", threads, a)?;
    println!(
        "held-out NME {:.3}% -> {:.3}%",
        outcome.initial_nme,
        outcome.final_nme
    );
    Ok(())
}

fn experiment_from_flags(a: &TrainArgs) -> Result<ExperimentConfig> {
    let usage = |m: &str| CliError::Usage(m.to_string());
    let dataset = a.dataset.as_ref().ok_or_else(|| usage("--dataset is required"))?;
    let out = a.out.as_ref().ok_or_else(|| usage("--out is required"))?;
    let (strategy, epochs, at_from) = if a.recipe {
        let at = (!a.grayscale).then_some(RECIPE_AT_FROM);
        (Strategy::S5, RECIPE_EPOCHS, at)
    } else {
        let s = a
            .strategy
            .ok_or_else(|| usage("--strategy (or --recipe) is required"))?;
        (s, a.epochs.unwrap_or(RECIPE_EPOCHS), a.at_from)
    };
    Ok(ExperimentConfig {
        strategy,
        epochs,
        seed: a.seed,
        widths: a.widths.widths,
        lr: a.lr,
        d_lr: a.d_lr,
        batch: a.batch,
        micro_batch: a.micro_batch,
        ct: !a.no_ct,
        at_from,
        grayscale: a.grayscale,
        split: a.split.to_string(),
        split_seed: a.split_seed,
        firstk: a.firstk,
        dataset: dataset.display().to_string(),
        localizer: a.localizer.as_ref().map(|p| p.display().to_string()),
        out: out.display().to_string(),
    })
}

pub fn train(a: &TrainArgs, threads: Option<usize>) -> Result<()> {
    let cfg = match &a.config {
        Some(path) => {
            let mut c = ExperimentConfig::load(path)?;
            if let Some(out) = &a.out {
                c.out = out.display().to_string();
            }
            c
        }
        None => experiment_from_flags(a)?,
    };
    let strategy_cfg = cfg.strategy_config().map_err(|e| match e {
        Error::Invalid(m) => CliError::Usage(m),
        e => e.into(),
    })?;
    let split: SplitKind = cfg.split.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let localizer = match (&cfg.localizer, cfg.strategy.needs_localizer()) {
        (None, true) => {
            return Err(Error::Precondition(format!(
                "strategy {} needs a pretrained localizer (--localizer)",
                cfg.strategy
            ))
            .into())
        }
        (Some(p), true) => Some(load_model(Path::new(p))?),
        (_, false) => None,
    };
    let ds = load(Path::new(&cfg.dataset))?;
    let plan = make_split(split, &ds.samples, cfg.split_seed, cfg.firstk)?;
    let classes = plan.gallery_classes();
    let train: Vec<_> = plan
        .train_indices()
        .iter()
        .map(|&i| ds.samples[i].clone())
        .collect();
    info!(
        "training {} on {} images of {} palms",
        cfg.strategy,
        train.len(),
        classes.len()
    );
    let (mut model, log) = train_strategy(
        &strategy_cfg,
        &train,
        &classes,
        localizer.as_ref(),
        BackboneConfig { widths: cfg.widths },
    )?;
    if let Some(m) = model.arch.meta.as_object_mut() {
        m.insert("split".into(), cfg.split.clone().into());
        m.insert("split_seed".into(), cfg.split_seed.into());
        m.insert("firstk".into(), cfg.firstk.into());
    }
    let out = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&out)?;
    model.save(&out.join("model.palmw"))?;
    log.write_csv(&out.join("train_log.csv"))?;
    write_resolved(&out, "train", threads, &cfg)?;
    if let Some(last) = log.rows.last() {
        println!(
            "{} epochs, final loss {:.4}, train accuracy {:.3}",
            log.rows.len(),
            last.loss,
            last.metric
        );
    }
    Ok(())
}

pub fn extract_roi(a: &ExtractRoiArgs, threads: Option<usize>) -> Result<()> {
    if a.side < 2 {
        return Err(CliError::Usage("--side must be at least 2".into()));
    }
    let localizer = a.localizer.as_deref().map(load_model).transpose()?;
    if let Some(m) = &localizer {
        if !m.arch.has_localizer {
            return Err(Error::Precondition("the model has no localizer".into()).into());
        }
    }
    let ds = load(&a.dataset)?;
    let dir = a.out.join("rois");
    std::fs::create_dir_all(&dir)?;
    let mut rows = Vec::with_capacity(ds.samples.len());
    for s in &ds.samples {
        let s = s.to_right_hand();
        let lm = match &localizer {
            Some(m) => {
                let mut rng = RngState::from_seed(0);
                m.localize(&prepare_input56(&s.image, m.arch.input_side), false, &mut rng)?
            }
            None => s.landmarks.clone().ok_or_else(|| {
                Error::Precondition(format!(
                    "{} has no landmarks; pass --localizer",
                    s.path
                ))
            })?,
        };
        let roi = tps::extract_roi(&s.image, &lm, a.side, a.side)?;
        let stem = Path::new(&s.path)
            .file_stem()
            .map(|x| x.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("{}", rows.len()));
        roi.save(&dir.join(format!("{stem}.png")))?;
        rows.push(LandmarkRow {
            path: s.path.clone(),
            landmarks: lm,
            space: CoordSpace::Normalized,
        });
    }
    write_landmark_csv(&a.out.join("landmarks.csv"), &rows)?;
    write_resolved(&a.out, "extract-roi", threads, a)?;
    println!("{} ROIs in {}", rows.len(), dir.display());
    Ok(())
}

/// The split flags fall back to what the model was trained on.
fn resolve_split(a: &SplitArgs, model: &Model<f32>) -> Result<(SplitKind, u64, usize)> {
    let meta = &model.arch.meta;
    let kind = match a.split {
        Some(k) => k,
        None => match meta.get("split").and_then(|v| v.as_str()) {
            Some(s) => s.parse()?,
            None => SplitKind::Internet,
        },
    };
    let seed = a
        .split_seed
        .or_else(|| meta.get("split_seed").and_then(|v| v.as_u64()))
        .unwrap_or(0);
    let k = a
        .firstk
        .or_else(|| meta.get("firstk").and_then(|v| v.as_u64()).map(|v| v as usize))
        .unwrap_or(DEFAULT_FIRSTK);
    Ok((kind, seed, k))
}

fn svm_config(m: &MatcherArgs) -> SvmConfig {
    SvmConfig {
        epochs: m.svm_epochs,
        lr: m.svm_lr,
        reg: m.svm_reg,
    }
}

fn require_classifier(model: &Model<f32>, path: &Path) -> Result<()> {
    if model.arch.n_class.is_none() {
        return Err(Error::Precondition(format!(
            "{} is a localizer without a recognition head",
            path.display()
        ))
        .into());
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalResolved<'a> {
    #[serde(flatten)]
    args: &'a EvalArgs,
    model_sha256: String,
    split_kind: SplitKind,
    split_seed: u64,
    firstk: usize,
}

pub fn eval(a: &EvalArgs, threads: Option<usize>) -> Result<()> {
    let model = load_model(&a.model)?;
    require_classifier(&model, &a.model)?;
    let (kind, seed, k) = resolve_split(&a.split, &model)?;
    let ds = load(&a.dataset)?;
    let plan = make_split(kind, &ds.samples, seed, k)?;
    let described = describe_samples(&model, &ds.samples)?;
    let set = EvalSet {
        samples: &ds.samples,
        plan: &plan,
        described: &described,
    };
    let scores = set.score(
        a.classifier,
        &model.arch.classes,
        a.matcher.pls_components,
        &svm_config(&a.matcher),
    )?;
    // Runs are identified by weights content, not by where files live.
    let mut hashed = a.clone();
    hashed.out = PathBuf::new();
    hashed.model = PathBuf::new();
    let resolved = EvalResolved {
        args: &hashed,
        model_sha256: sha256_hex(&model.encode()?),
        split_kind: kind,
        split_seed: seed,
        firstk: k,
    };
    let report = set.report(&scores, seed, config_hash(&resolved)?)?;
    report.write_all(&a.out)?;
    scores.write_csv(&a.out.join("scores.csv"))?;
    write_resolved(
        &a.out,
        "eval",
        threads,
        &EvalResolved {
            args: a,
            ..resolved
        },
    )?;
    print_summary(&report)?;
    Ok(())
}

fn print_summary(r: &EvaluationReport) -> Result<()> {
    let eer = r
        .eer
        .map(|e| format!("{e:.2}%"))
        .unwrap_or_else(|| "n/a".into());
    println!(
        "{}: rank-1 {:.2}%, rank-30 {:.2}%, EER {eer}, {} probes over {} classes",
        r.classifier,
        100.0 * r.rank1,
        100.0 * r.rank30,
        r.n_probes,
        r.n_gallery_classes
    );
    println!("report hash {}", r.hash()?);
    Ok(())
}

fn row_label(model: &Model<f32>, path: &Path, taken: &[String]) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let base = model
        .arch
        .meta
        .get("strategy")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .unwrap_or_else(|| stem.clone());
    if taken.contains(&base) {
        let parent = path
            .parent()
            .and_then(|p| p.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or(stem);
        format!("{base} ({parent})")
    } else {
        base
    }
}

fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn report(a: &ReportArgs, threads: Option<usize>) -> Result<()> {
    if a.classifiers.is_empty() {
        return Err(CliError::Usage("no classifiers given".into()));
    }
    let ds = load(&a.dataset)?;
    let svm = svm_config(&a.matcher);
    let mut grid = StrategyGrid::default();
    let mut labels: Vec<String> = Vec::new();
    for path in &a.models {
        let model = load_model(path)?;
        require_classifier(&model, path)?;
        let label = row_label(&model, path, &labels);
        let (kind, seed, k) = resolve_split(&a.split, &model)?;
        let plan = make_split(kind, &ds.samples, seed, k)?;
        let described = describe_samples(&model, &ds.samples)?;
        let set = EvalSet {
            samples: &ds.samples,
            plan: &plan,
            described: &described,
        };
        let digest = sha256_hex(&model.encode()?);
        for &c in &a.classifiers {
            let scores = set.score(c, &model.arch.classes, a.matcher.pls_components, &svm)?;
            let hash = config_hash(&(&digest, &a.dataset, kind, seed, k, c, &a.matcher))?;
            let r = set.report(&scores, seed, hash)?;
            r.write_all(&a.out.join(safe_name(&label)).join(c.as_str()))?;
            grid.cells.push(GridCell {
                strategy: label.clone(),
                classifier: c.to_string(),
                rank1: r.rank1,
                rank30: r.rank30,
                eer: r.eer,
                report_hash: r.hash()?,
            });
        }
        labels.push(label);
    }
    std::fs::create_dir_all(&a.out)?;
    let md = grid.to_markdown();
    std::fs::write(a.out.join("table.md"), &md)?;
    std::fs::write(a.out.join("table.csv"), grid.to_csv())?;
    std::fs::write(a.out.join("table.json"), serde_json::to_string_pretty(&grid)?)?;
    write_resolved(&a.out, "report", threads, a)?;
    print!("{md}");
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs, threads: Option<usize>) -> Result<()> {
    if a.instances == 0 {
        return Err(CliError::Usage("--instances must be positive".into()));
    }
    let reports = run_suite(a.instances, a.seed)?;
    println!("{:<24} {:>9} {:>12} {:>10}  result", "operation", "instances", "max error", "tolerance");
    for r in &reports {
        println!(
            "{:<24} {:>9} {:>12.3e} {:>10.0e}  {}",
            r.name,
            r.instances,
            r.max_error,
            r.tolerance,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out)?;
        let mut csv = String::from("operation,instances,max_error,tolerance,passed\n");
        for r in &reports {
            csv += &format!("{},{},{},{},{}\n", r.name, r.instances, r.max_error, r.tolerance, r.passed());
        }
        std::fs::write(out.join("gradcheck.csv"), csv)?;
        write_resolved(out, "gradcheck", threads, a)?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("gradient check failed for {}", failed.join(", "))).into())
    }
}
