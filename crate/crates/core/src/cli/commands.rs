use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::report::{merge_section, read_json, write_json, Tsv, REPORT_FILE};
use crate::analysis::{
    class_centers, default_k, extract_features, misclass_distribution, pca_embed, selectivity_report, tsne_embed,
    ClassCenters, Embedding, FeatureMatrix, MisclassDistribution, SelectivityReport, TsneParams,
};
use crate::attack::{run_campaign, AttackConfig, CampaignResult, PairCount};
use crate::data::ppm::write_ppm;
use crate::data::{
    checkpoint_load, checkpoint_save, generate_synthetic, load_dataset_dir, write_dataset_dir, Dataset, SynthSpec,
};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;
use crate::train::{evaluate_accuracy, split_dataset, train_sgd, TrainConfig, TrainHistory};

pub const DATASET_DIR: &str = "dataset";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CAMPAIGN_FILE: &str = "campaigns.json";

/// Default artifact locations under an output directory.
pub fn default_dataset(out: &Path) -> PathBuf {
    out.join(DATASET_DIR)
}

pub fn default_checkpoint(out: &Path) -> PathBuf {
    out.join(CHECKPOINT_FILE)
}

pub fn default_campaign(out: &Path) -> PathBuf {
    out.join(CAMPAIGN_FILE)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn record_common(cfg: &RunConfig, out: &Path) -> Result<()> {
    let report = out.join(REPORT_FILE);
    merge_section(&report, "version", &crate::VERSION)?;
    merge_section(&report, "config", &cfg.clone().resolved())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub spec: SynthSpec,
    pub directory: String,
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    pub records: usize,
    /// Fingerprint of the tree as it reads back from disk (8-bit quantized).
    pub fingerprint: String,
}

/// Writes the synthetic benchmark to `<out>/dataset`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<SynthSummary> {
    cfg.validate()?;
    let spec = cfg.synth_spec();
    let ds = generate_synthetic(&spec)?;
    let dir = default_dataset(out);
    ensure_dir(&dir)?;
    let counts = write_dataset_dir(&ds, &dir)?;
    let written = load_dataset_dir(&dir)?;
    let summary = SynthSummary {
        spec,
        directory: DATASET_DIR.to_string(),
        class_names: ds.class_names().to_vec(),
        records: counts.iter().sum(),
        class_counts: counts,
        fingerprint: written.fingerprint(),
    };
    record_common(cfg, out)?;
    merge_section(&out.join(REPORT_FILE), "synth", &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub train_fraction: f64,
    pub seed: u64,
    pub train_records: usize,
    pub test_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizationSummary {
    pub samples: usize,
    pub epochs: usize,
    pub final_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: ModelConfig,
    pub parameter_count: usize,
    pub checksum: String,
    pub dataset_fingerprint: String,
    pub split: SplitInfo,
    pub train_config: TrainConfig,
    pub history: TrainHistory,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub memorization: Option<MemorizationSummary>,
}

fn split_for(cfg: &RunConfig, ds: &Dataset) -> Result<(Dataset, Dataset, SplitInfo)> {
    let seed = cfg.split_seed();
    let (tr, te) = split_dataset(ds, cfg.train.train_fraction, seed)?;
    let info = SplitInfo {
        train_fraction: cfg.train.train_fraction,
        seed,
        train_records: tr.len(),
        test_records: te.len(),
    };
    Ok((tr, te, info))
}

/// Splits, trains, evaluates and writes `<out>/model.ckpt`.
pub fn cmd_train(cfg: &RunConfig, dataset_dir: &Path, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let ds = load_dataset_dir(dataset_dir)?;
    let shape = ds.image_shape().expect("loaded datasets are non-empty");
    let model_config = cfg.validate_model(shape, ds.num_classes())?;
    let (tr, te, split) = split_for(cfg, &ds)?;
    let train_config = cfg.train_config();
    let mut model = Model::build(model_config.clone(), cfg.model_seed())?;
    info!("training {:?} on {} records", model_config.family, tr.len());
    let mut history = train_sgd(&mut model, &tr, &train_config)?;
    let train_accuracy = evaluate_accuracy(&model, &tr)?;
    let test_accuracy = evaluate_accuracy(&model, &te)?;
    history.test_accuracy = Some(test_accuracy);
    info!("train accuracy {train_accuracy:.4}, test accuracy {test_accuracy:.4}");
    ensure_dir(out)?;
    checkpoint_save(&model, Some(&history), &default_checkpoint(out))?;

    let memorization = match &cfg.train.memorization {
        Some(m) => Some(memorize(cfg, &model_config, &tr, m.samples, m.epochs, m.seed.unwrap_or(cfg.seed.wrapping_add(5)))?),
        None => None,
    };

    let mut curve = Tsv::new(&["epoch", "loss", "train_accuracy"]);
    for (i, (l, a)) in history.epoch_loss.iter().zip(&history.epoch_train_accuracy).enumerate() {
        curve.row(&[&(i + 1), l, a]);
    }
    curve.write(&out.join("train_curve.tsv"))?;

    let summary = TrainSummary {
        parameter_count: model.parameter_count(),
        checksum: model.checksum(),
        dataset_fingerprint: ds.fingerprint(),
        model: model_config,
        split,
        train_config,
        history,
        train_accuracy,
        test_accuracy,
        memorization,
    };
    record_common(cfg, out)?;
    merge_section(&out.join(REPORT_FILE), "train", &summary)?;
    Ok(summary)
}

/// Trains a fresh model on `samples` seeded-random training records and reports its accuracy on them.
pub fn memorize(
    cfg: &RunConfig,
    model_config: &ModelConfig,
    train: &Dataset,
    samples: usize,
    epochs: usize,
    seed: u64,
) -> Result<MemorizationSummary> {
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(samples.min(train.len()));
    idx.sort_unstable();
    let subset = train.subset(&idx);
    let mut model = Model::build(model_config.clone(), cfg.model_seed())?;
    let tc = TrainConfig { epochs, seed, ..cfg.train_config() };
    let history = train_sgd(&mut model, &subset, &tc)?;
    let train_accuracy = evaluate_accuracy(&model, &subset)?;
    info!("memorization: {} samples, accuracy {train_accuracy:.4}", subset.len());
    Ok(MemorizationSummary {
        samples: subset.len(),
        epochs,
        final_loss: *history.epoch_loss.last().expect("at least one epoch"),
        train_accuracy,
    })
}

/// Everything `analyze` needs to check it sees the same model and data as `attack`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignArtifact {
    pub version: String,
    pub model_checksum: String,
    pub dataset_fingerprint: String,
    pub split: SplitInfo,
    pub campaigns: Vec<CampaignResult>,
}

/// One row per campaign, mirroring the usual fooling-rate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoolingRow {
    pub campaign: usize,
    pub algorithm: String,
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub confidence_threshold: f64,
    pub attacked: usize,
    pub adversarial_examples: usize,
    pub fooling_rate: f64,
    pub fooling_rate_percent: f64,
    pub degenerate: bool,
    pub max_linf: f64,
    pub pair_counts: Vec<PairCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub model_checksum: String,
    pub dataset_fingerprint: String,
    pub attacked_split: String,
    pub records: usize,
    pub rows: Vec<FoolingRow>,
}

fn check_compatible(model: &Model, ds: &Dataset) -> Result<()> {
    let want = model.config().input_shape;
    if ds.image_shape() != Some(want) || ds.num_classes() != model.config().num_classes {
        return Err(Error::Input(format!(
            "checkpoint expects {} classes of {want:?} images; dataset has {} classes of {:?}",
            model.config().num_classes,
            ds.num_classes(),
            ds.image_shape()
        )));
    }
    Ok(())
}

fn campaign_stem(index: usize, config: &AttackConfig) -> String {
    format!("c{index}_{}", config.label())
}

/// Attacks the test split with every configured campaign and writes `<out>/campaigns.json`.
pub fn cmd_attack(cfg: &RunConfig, checkpoint: &Path, dataset_dir: &Path, out: &Path) -> Result<AttackSummary> {
    cfg.validate()?;
    let (model, _) = checkpoint_load(checkpoint)?;
    let ds = load_dataset_dir(dataset_dir)?;
    check_compatible(&model, &ds)?;
    let (_, te, split) = split_for(cfg, &ds)?;
    let checksum = model.checksum();
    ensure_dir(out)?;
    let mut campaigns = Vec::with_capacity(cfg.attack.campaigns.len());
    let mut rows = Vec::new();
    let mut table = Tsv::new(&["campaign", "algorithm", "epsilon", "adversarial_examples", "attacked", "fooling_rate_percent"]);
    for (i, ac) in cfg.attack.campaigns.iter().enumerate() {
        let result = run_campaign(&model, &te, ac).map_err(|e| e.in_section(&format!("attack.campaigns[{i}]")))?;
        if model.checksum() != checksum {
            return Err(Error::State("model parameters changed during a campaign".into()));
        }
        info!("{}: {} / {} fooled", ac.label(), result.misclassified, result.attacked);
        if cfg.attack.dump_images > 0 {
            dump_pairs(&te, &result, cfg.attack.dump_images, &out.join("adversarial").join(campaign_stem(i, ac)))?;
        }
        let row = FoolingRow {
            campaign: i,
            algorithm: ac.algorithm.to_string(),
            epsilon: ac.epsilon,
            step_size: ac.step_size,
            iterations: ac.iterations,
            confidence_threshold: ac.confidence_threshold,
            attacked: result.attacked,
            adversarial_examples: result.misclassified,
            fooling_rate: result.fooling_rate.value,
            fooling_rate_percent: result.fooling_rate.value * 100.0,
            degenerate: result.fooling_rate.degenerate,
            max_linf: result.records.iter().map(|r| r.linf).fold(0.0, f64::max),
            pair_counts: result.pair_counts.clone(),
        };
        table.row(&[&i, &row.algorithm, &row.epsilon, &row.adversarial_examples, &row.attacked, &format!("{:.2}", row.fooling_rate_percent)]);
        rows.push(row);
        campaigns.push(result);
    }
    table.write(&out.join("fooling_rates.tsv"))?;
    let artifact = CampaignArtifact {
        version: crate::VERSION.to_string(),
        model_checksum: checksum.clone(),
        dataset_fingerprint: ds.fingerprint(),
        split,
        campaigns,
    };
    write_json(&default_campaign(out), &artifact)?;
    let summary = AttackSummary {
        model_checksum: checksum,
        dataset_fingerprint: artifact.dataset_fingerprint,
        attacked_split: "test".into(),
        records: te.len(),
        rows,
    };
    record_common(cfg, out)?;
    merge_section(&out.join(REPORT_FILE), "attack", &summary)?;
    Ok(summary)
}

/// Writes the first `limit` successful examples as `<index>_orig.ppm` / `<index>_adv.ppm`.
fn dump_pairs(ds: &Dataset, result: &CampaignResult, limit: usize, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    for r in result.records.iter().filter(|r| r.success).take(limit) {
        let Some(rho) = &r.perturbation else { continue };
        let orig = &ds.records()[r.index].image;
        let adv: Vec<f64> = orig.data().iter().zip(rho.data()).map(|(x, p)| (x + p).clamp(0.0, 1.0)).collect();
        let adv = Tensor::new(orig.shape().to_vec(), adv)?;
        write_ppm(&dir.join(format!("{:04}_orig.ppm", r.index)), orig)?;
        write_ppm(&dir.join(format!("{:04}_adv.ppm", r.index)), &adv)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDistances {
    pub mean_intra_class: f64,
    pub mean_inter_class: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignAnalysis {
    pub campaign: usize,
    pub label: String,
    /// Nearest classes from t-SNE cluster centers.
    pub selectivity: SelectivityReport,
    /// The same join with centers taken in the raw penultimate-feature space.
    pub selectivity_features: SelectivityReport,
    pub distribution: MisclassDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub samples: usize,
    pub feature_width: usize,
    pub k: usize,
    pub feature_distances: FeatureDistances,
    pub pca: Embedding,
    pub tsne: Embedding,
    pub centers_tsne: ClassCenters,
    pub centers_features: ClassCenters,
    pub campaigns: Vec<CampaignAnalysis>,
}

/// Mean pairwise Euclidean distance within and across classes.
pub fn feature_distances(f: &FeatureMatrix) -> FeatureDistances {
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    let labels = f.labels();
    for i in 0..f.rows() {
        for j in i + 1..f.rows() {
            let d: f64 = f.row(i).iter().zip(f.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if labels[i] == labels[j] {
                intra += d;
                n_intra += 1;
            } else {
                inter += d;
                n_inter += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    FeatureDistances { mean_intra_class: mean(intra, n_intra), mean_inter_class: mean(inter, n_inter) }
}

/// Embeds test-split features, computes centers, selectivity and distribution statistics.
pub fn cmd_analyze(
    cfg: &RunConfig,
    checkpoint: &Path,
    dataset_dir: &Path,
    campaign_path: &Path,
    out: &Path,
) -> Result<AnalysisSummary> {
    cfg.validate()?;
    let (model, _) = checkpoint_load(checkpoint)?;
    let ds = load_dataset_dir(dataset_dir)?;
    check_compatible(&model, &ds)?;
    let artifact: CampaignArtifact = read_json(campaign_path)?;
    if artifact.model_checksum != model.checksum() {
        return Err(Error::Input(format!("{} was produced by a different model", campaign_path.display())));
    }
    if artifact.dataset_fingerprint != ds.fingerprint() {
        return Err(Error::Input(format!("{} was produced from a different dataset", campaign_path.display())));
    }
    let (_, te) = split_dataset(&ds, artifact.split.train_fraction, artifact.split.seed)?;
    for c in &artifact.campaigns {
        c.check_consistency()?;
        if c.records.len() != te.len() || c.num_classes != ds.num_classes() {
            return Err(Error::Input(format!("campaign {} does not cover the test split", c.config.label())));
        }
    }

    let num_classes = ds.num_classes();
    let k = cfg.analysis.k.unwrap_or_else(|| default_k(num_classes));
    let features = extract_features(&model, &te)?;
    let pca = pca_embed(&features, 2)?;
    let mut params = TsneParams::new(cfg.analysis.perplexity, cfg.analysis.iterations, cfg.tsne_seed());
    params.init = cfg.analysis.init;
    let tsne = tsne_embed(&features, &params).map_err(|e| e.in_section("analysis"))?;
    let centers_tsne = class_centers(&tsne.coords, 2, features.labels(), num_classes)?;
    let centers_features = class_centers(features.data(), features.width(), features.labels(), num_classes)?;

    ensure_dir(out)?;
    for (name, emb) in [("embedding_tsne.tsv", &tsne), ("embedding_pca.tsv", &pca)] {
        let mut t = Tsv::new(&["x", "y", "label"]);
        for (i, &label) in features.labels().iter().enumerate() {
            let p = emb.point(i);
            t.row(&[&p[0], &p[1], &label]);
        }
        t.write(&out.join(name))?;
    }

    let mut topk = Tsv::new(&["space", "source", "rank", "class", "distance"]);
    let mut targets = Tsv::new(&["campaign", "source", "target", "count"]);
    let mut totals = Tsv::new(&["campaign", "target", "count"]);
    let mut campaigns = Vec::with_capacity(artifact.campaigns.len());
    for (i, c) in artifact.campaigns.iter().enumerate() {
        let selectivity = selectivity_report(c, &centers_tsne, k)?;
        let selectivity_features = selectivity_report(c, &centers_features, k)?;
        let distribution = misclass_distribution(c)?;
        let stem = campaign_stem(i, &c.config);
        for s in &selectivity.per_source {
            for (target, count) in s.target_histogram.iter().enumerate() {
                targets.row(&[&stem, &s.source, &target, count]);
            }
        }
        for (target, count) in distribution.counts.iter().enumerate() {
            totals.row(&[&stem, &target, count]);
        }
        if i == 0 {
            for (space, report) in [("tsne", &selectivity), ("features", &selectivity_features)] {
                for s in &report.per_source {
                    for (rank, n) in s.nearest.iter().enumerate() {
                        topk.row(&[&space, &s.source, &(rank + 1), &n.class, &n.distance]);
                    }
                }
            }
        }
        campaigns.push(CampaignAnalysis { campaign: i, label: c.config.label(), selectivity, selectivity_features, distribution });
    }
    topk.write(&out.join("topk_distances.tsv"))?;
    targets.write(&out.join("target_histograms.tsv"))?;
    totals.write(&out.join("target_totals.tsv"))?;

    let summary = AnalysisSummary {
        samples: features.rows(),
        feature_width: features.width(),
        k,
        feature_distances: feature_distances(&features),
        pca,
        tsne,
        centers_tsne,
        centers_features,
        campaigns,
    };
    record_common(cfg, out)?;
    merge_section(&out.join(REPORT_FILE), "analysis", &summary)?;
    Ok(summary)
}
