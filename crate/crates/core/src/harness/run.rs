use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::time::SystemTime;

use super::{
    emit_plots, emit_tables, ArchPreset, ExperimentConfig, ExperimentResult, FoldFidelity,
    MeanStd, PairwiseSignificance, Provenance, StrategyReport, RESULT_SCHEMA_VERSION,
};
use crate::classifier::{
    desk_classifier, paper_classifier, predict, train_classifier, ClassifierArch,
};
use crate::cohort::{save_cohort, stratified_kfold, Cohort, ConnectivityVector, Diagnosis, Volume};
use crate::cyclegan::{
    desk_preset, paper_preset, save_checkpoint, train_gan, GanArch, GanModel,
};
use crate::error::{Error, Result};
use crate::imputation::{apply_strategy, ImputationStrategy, StrategyKind};
use crate::metrics::{
    annotate_significance, classification_metrics, mean_std, mse, pearson, psnr, ssim,
    ClassificationMetrics, FidelityReport,
};
use crate::seeds::derive_seed;

/// Out-of-fold generated data: every record's synthetic counterpart comes
/// from the GAN of the fold where that record was held out.
#[derive(Debug, Clone, Default)]
pub struct GeneratedGroups {
    pub volumes: Vec<(Diagnosis, Volume)>,
    pub fncs: Vec<(Diagnosis, ConnectivityVector)>,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub result: ExperimentResult,
    pub generated: GeneratedGroups,
    pub out_dir: PathBuf,
}

fn fold_err(fold: usize, what: &str, e: Error) -> Error {
    Error::Experiment(format!("fold {fold}, {what}: {e}"))
}

fn assert_fold_split(cohort: &Cohort, train: &[String], test: &[String], fold: usize) -> Result<()> {
    let train_set: BTreeSet<&String> = train.iter().collect();
    let test_set: BTreeSet<&String> = test.iter().collect();
    if train_set.intersection(&test_set).next().is_some() {
        return Err(Error::Experiment(format!(
            "fold {fold}: train/test id sets overlap"
        )));
    }
    let all: BTreeSet<&String> = cohort.records().iter().map(|r| &r.subject_id).collect();
    let union: BTreeSet<&String> = train_set.union(&test_set).copied().collect();
    if union != all {
        return Err(Error::Experiment(format!(
            "fold {fold}: train/test ids do not partition the cohort"
        )));
    }
    Ok(())
}

/// Every subject the component trained on must be a training-fold subject.
fn assert_training_inputs(portion: &Cohort, train: &[String], fold: usize, what: &str) -> Result<()> {
    let allowed: BTreeSet<&String> = train.iter().collect();
    for r in portion.records() {
        if !allowed.contains(&r.subject_id) {
            return Err(Error::Experiment(format!(
                "fold {fold}: {what} would train on held-out subject {}",
                r.subject_id
            )));
        }
    }
    Ok(())
}

fn gan_arch_for(config: &ExperimentConfig, cohort: &Cohort) -> Result<GanArch> {
    match config.arch {
        ArchPreset::Desk => desk_preset(cohort.n_components(), cohort.volume_shape()),
        ArchPreset::Paper => {
            let arch = paper_preset();
            if arch.fnc_dim != cohort.fnc_dim() || arch.volume_shape != cohort.volume_shape() {
                return Err(Error::Config(format!(
                    "paper preset expects F={} and {:?} volumes, cohort has F={} and {:?}",
                    arch.fnc_dim,
                    arch.volume_shape,
                    cohort.fnc_dim(),
                    cohort.volume_shape()
                )));
            }
            Ok(arch)
        }
    }
}

fn classifier_arch_for(config: &ExperimentConfig, cohort: &Cohort) -> ClassifierArch {
    match config.arch {
        ArchPreset::Desk => desk_classifier(cohort.fnc_dim(), cohort.volume_shape()),
        ArchPreset::Paper => paper_classifier(cohort.fnc_dim(), cohort.volume_shape()),
    }
}

struct FoldFidelitySamples {
    ssim: Vec<f64>,
    psnr: Vec<f64>,
    mse: Vec<f64>,
    pearson: Vec<f64>,
    fnc_mse: Vec<f64>,
    fnc_pearson: Vec<f64>,
}

fn fidelity_on_paired(
    gan: &GanModel,
    test_cohort: &Cohort,
    fold: usize,
) -> Result<FoldFidelitySamples> {
    let mut s = FoldFidelitySamples {
        ssim: Vec::new(),
        psnr: Vec::new(),
        mse: Vec::new(),
        pearson: Vec::new(),
        fnc_mse: Vec::new(),
        fnc_pearson: Vec::new(),
    };
    let paired = test_cohort.paired();
    if paired.is_empty() {
        return Err(Error::Experiment(format!(
            "fold {fold}: no paired held-out records to measure fidelity on"
        )));
    }
    for r in paired {
        let real_fnc = r.fnc.as_ref().unwrap();
        let real_vol = r.t1.as_ref().unwrap();
        let gen_vol = gan.g1_forward(&[real_fnc])?.remove(0);
        let gen_fnc = gan.g2_forward(&[real_vol])?.remove(0);
        let rv: Vec<f64> = real_vol.voxels().iter().copied().collect();
        let gv: Vec<f64> = gen_vol.voxels().iter().copied().collect();
        s.ssim.push(ssim(real_vol, &gen_vol, 2.0, 7)?);
        s.psnr.push(psnr(real_vol, &gen_vol, 2.0)?);
        s.mse.push(mse(&rv, &gv)?);
        s.pearson.push(pearson(&rv, &gv)?);
        s.fnc_mse.push(mse(real_fnc.values(), gen_fnc.values())?);
        s.fnc_pearson.push(pearson(real_fnc.values(), gen_fnc.values())?);
    }
    Ok(s)
}

fn fidelity_report(
    ssim: &[f64],
    psnr: &[f64],
    mse: &[f64],
    pearson: &[f64],
) -> FidelityReport {
    let (ssim_mean, ssim_std) = mean_std(ssim);
    let (psnr_mean, psnr_std) = mean_std(psnr);
    let (mse_mean, mse_std) = mean_std(mse);
    let (pearson_mean, pearson_std) = mean_std(pearson);
    FidelityReport {
        ssim_mean,
        ssim_std,
        psnr_mean,
        psnr_std,
        mse_mean,
        mse_std,
        pearson_mean,
        pearson_std,
    }
}

fn evaluate_strategy(
    kind: StrategyKind,
    gan: &GanModel,
    train_cohort: &Cohort,
    test_cohort: &Cohort,
    train_ids: &[String],
    clf_arch: &ClassifierArch,
    config: &ExperimentConfig,
    fold: usize,
) -> Result<ClassificationMetrics> {
    let fold_tag = format!("fold-{fold}");
    if kind == StrategyKind::Generative && gan.fold_tag.as_deref() != Some(fold_tag.as_str()) {
        return Err(Error::Experiment(format!(
            "fold {fold}: generative strategy handed a model tagged {:?}",
            gan.fold_tag
        )));
    }
    let strategy = match kind {
        StrategyKind::Subsample => ImputationStrategy::Subsample,
        StrategyKind::ZeroFill => ImputationStrategy::ZeroFill,
        StrategyKind::Generative => ImputationStrategy::Generative(gan),
    };
    let name = kind.as_str();
    let train_full = apply_strategy(&strategy, train_cohort)
        .map_err(|e| fold_err(fold, &format!("strategy {name} (train)"), e))?;
    let test_full = apply_strategy(&strategy, test_cohort)
        .map_err(|e| fold_err(fold, &format!("strategy {name} (test)"), e))?;
    assert_training_inputs(&train_full, train_ids, fold, name)?;

    let mut clf_cfg = config.classifier.clone();
    clf_cfg.seed = derive_seed(config.master_seed, &format!("fold-{fold}/clf/{name}"));
    let (model, _) = train_classifier(&train_full, clf_arch, &clf_cfg)
        .map_err(|e| fold_err(fold, &format!("strategy {name} classifier"), e))?;
    let preds = predict(&model, &test_full)?;
    let truth: Vec<Diagnosis> = test_full.records().iter().map(|r| r.diagnosis).collect();
    let predicted: Vec<Diagnosis> = preds.iter().map(|p| p.label).collect();
    classification_metrics(&truth, &predicted)
}

/// Run the full cross-validated pipeline and write every artifact under
/// `output_dir/<experiment_id>/`. Deterministic: the master seed and config
/// fix all outputs; wall-clock timestamps only appear in the sidecar
/// `run.log`, never in `result.json`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let out_dir = config.output_dir.join(&config.experiment_id);
    for sub in ["cohort", "checkpoints", "tables", "plots"] {
        fs::create_dir_all(out_dir.join(sub))?;
    }
    let mut run_log = Vec::new();
    let stamp = |log: &mut Vec<String>, msg: &str| {
        let t = SystemTime::now()
            .duration_since(SystemTime::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        log.push(format!("{t:.3} {msg}"));
    };

    let cohort = config.resolve_cohort()?;
    save_cohort(&cohort, &out_dir.join("cohort"))?;
    stamp(&mut run_log, "cohort resolved and saved");

    let gan_arch = gan_arch_for(config, &cohort)?;
    let clf_arch = classifier_arch_for(config, &cohort);
    let folds = stratified_kfold(
        &cohort,
        config.k_folds,
        derive_seed(config.master_seed, "folds"),
    )?;
    let fold_seeds: Vec<u64> = (0..folds.len())
        .map(|i| derive_seed(config.master_seed, &format!("fold-{i}/gan")))
        .collect();

    let mut per_strategy: Vec<Vec<ClassificationMetrics>> =
        vec![Vec::new(); config.strategies.len()];
    let mut fidelity_per_fold = Vec::new();
    let mut pooled = FoldFidelitySamples {
        ssim: Vec::new(),
        psnr: Vec::new(),
        mse: Vec::new(),
        pearson: Vec::new(),
        fnc_mse: Vec::new(),
        fnc_pearson: Vec::new(),
    };
    let mut generated = GeneratedGroups::default();
    let mut plot_model: Option<GanModel> = None;

    for (fold, (train_ids, test_ids)) in folds.iter().enumerate() {
        assert_fold_split(&cohort, train_ids, test_ids, fold)?;
        let train_cohort = cohort.subset(train_ids)?;
        let test_cohort = cohort.subset(test_ids)?;
        assert_training_inputs(&train_cohort, train_ids, fold, "GAN")?;

        let mut gan_cfg = config.gan.clone();
        gan_cfg.seed = fold_seeds[fold];
        let (mut gan, _gan_log) = train_gan(&train_cohort, &gan_arch, &gan_cfg)
            .map_err(|e| fold_err(fold, "GAN training", e))?;
        gan.fold_tag = Some(format!("fold-{fold}"));
        let ckpt_dir = out_dir.join("checkpoints").join(format!("fold-{fold}"));
        fs::create_dir_all(&ckpt_dir)?;
        save_checkpoint(&gan, &gan_cfg, &ckpt_dir.join("gan.json"))?;
        stamp(&mut run_log, &format!("fold {fold}: GAN trained"));

        let samples = fidelity_on_paired(&gan, &test_cohort, fold)?;
        fidelity_per_fold.push(FoldFidelity {
            fold,
            volume: fidelity_report(&samples.ssim, &samples.psnr, &samples.mse, &samples.pearson),
            fnc_mse: MeanStd::of(&samples.fnc_mse),
            fnc_pearson: MeanStd::of(&samples.fnc_pearson),
        });
        pooled.ssim.extend(&samples.ssim);
        pooled.psnr.extend(&samples.psnr);
        pooled.mse.extend(&samples.mse);
        pooled.pearson.extend(&samples.pearson);
        pooled.fnc_mse.extend(&samples.fnc_mse);
        pooled.fnc_pearson.extend(&samples.fnc_pearson);

        for r in test_cohort.records() {
            if let Some(fnc) = &r.fnc {
                generated
                    .volumes
                    .push((r.diagnosis, gan.g1_forward(&[fnc])?.remove(0)));
            }
            if let Some(t1) = &r.t1 {
                generated
                    .fncs
                    .push((r.diagnosis, gan.g2_forward(&[t1])?.remove(0)));
            }
        }

        for (si, &kind) in config.strategies.iter().enumerate() {
            let metrics = evaluate_strategy(
                kind,
                &gan,
                &train_cohort,
                &test_cohort,
                train_ids,
                &clf_arch,
                config,
                fold,
            )?;
            per_strategy[si].push(metrics);
            stamp(
                &mut run_log,
                &format!("fold {fold}: strategy {} evaluated", kind.as_str()),
            );
        }

        if plot_model.is_none() {
            plot_model = Some(gan);
        }
    }

    let strategies: Vec<StrategyReport> = config
        .strategies
        .iter()
        .zip(per_strategy)
        .map(|(&kind, folds)| StrategyReport::aggregate(kind, folds))
        .collect();

    let mut significance = Vec::new();
    for i in 0..strategies.len() {
        for j in (i + 1)..strategies.len() {
            let acc_a: Vec<f64> = strategies[i].per_fold.iter().map(|m| m.accuracy).collect();
            let acc_b: Vec<f64> = strategies[j].per_fold.iter().map(|m| m.accuracy).collect();
            significance.push(PairwiseSignificance {
                strategy_a: strategies[i].strategy,
                strategy_b: strategies[j].strategy,
                metric: "accuracy".into(),
                annotation: annotate_significance(&acc_a, &acc_b)?,
            });
        }
    }

    let result = ExperimentResult {
        version: RESULT_SCHEMA_VERSION,
        experiment_id: config.experiment_id.clone(),
        strategies,
        fidelity_per_fold,
        fidelity_pooled: fidelity_report(&pooled.ssim, &pooled.psnr, &pooled.mse, &pooled.pearson),
        significance,
        provenance: Provenance {
            config_hash: config.hash(),
            master_seed: config.master_seed,
            fold_seeds,
        },
    };

    let mut json = serde_json::to_string_pretty(&result)?;
    json.push('\n');
    fs::write(out_dir.join("result.json"), json)?;
    emit_tables(&result, &out_dir.join("tables"))?;
    let plot_model = plot_model.expect("at least one fold ran");
    emit_plots(&result, &plot_model, &cohort, &out_dir.join("plots"))?;
    stamp(&mut run_log, "artifacts written");
    fs::write(out_dir.join("run.log"), run_log.join("\n") + "\n")?;

    Ok(ExperimentOutput {
        result,
        generated,
        out_dir,
    })
}
