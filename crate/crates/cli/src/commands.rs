//! Command implementations. Every output is a pure function of the config,
//! so reruns overwrite files with identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::{Array1, Array3, ArrayView3};
use posecast::epistemic::{
    epu_score, estimate_k, fit_clusters, pretrain_autoencoder, scoring_k, ClusterModel, EpUReport,
};
use posecast::forecast::{train, Checkpoint, Forecaster, TrainConfig};
use posecast::metrics::{
    ap_mpjpe, auroc, gains, mean_mpjpe_curve, population_std, roc_curve, table_from_curve,
    HorizonTable,
};
use posecast::pose::{
    generate_corpus, read_sequence, shuffle_frames, shuffle_joints, window, write_sequence,
    CorpusSpec, ForecastSample, SYNTH_FPS,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ExperimentConfig, BASELINE_RUN};

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub quiet: bool,
}

impl Ctx {
    fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    /// Records the resolved configuration in the experiment directory.
    fn record_config(&self) -> Result<()> {
        write_text(&self.cfg.out.join("config.json"), &pretty(&self.cfg)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub family_id: u32,
    pub split: Split,
}

/// `manifest.json` of a generated dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub fps: f64,
    pub num_frames: usize,
    pub seed: u64,
    pub family_counts: BTreeMap<u32, usize>,
    pub sequences: Vec<ManifestEntry>,
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {what}: {}", path.display());
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require(path, "checkpoint")?;
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_manifest(dir: &Path) -> Result<DataManifest> {
    let path = dir.join("manifest.json");
    require(&path, "dataset manifest (run `gen` first)")?;
    Ok(serde_json::from_str(&fs::read_to_string(&path)?)
        .with_context(|| format!("parsing {}", path.display()))?)
}

/// Windows of every sequence in `split` belonging to one of `families`.
fn load_windows(
    cfg: &ExperimentConfig,
    families: &[u32],
    split: Split,
) -> Result<Vec<ForecastSample>> {
    let dir = cfg.data_dir();
    let manifest = load_manifest(&dir)?;
    let stride = match split {
        Split::Train => cfg.data.stride,
        Split::Test => cfg.data.test_stride,
    };
    let mut out = Vec::new();
    for entry in manifest
        .sequences
        .iter()
        .filter(|e| e.split == split && families.contains(&e.family_id))
    {
        let path = dir.join(&entry.file);
        let seq = read_sequence(&path)
            .with_context(|| format!("reading {}", path.display()))?
            .with_family_label(Some(entry.family_id));
        let id = entry.file.trim_end_matches(".poseseq");
        out.extend(window(
            &seq,
            id,
            cfg.data.obs_len,
            cfg.data.horizon,
            stride,
        )?);
    }
    if out.is_empty() {
        bail!(
            "no {split:?} windows for families {families:?} in {}",
            dir.display()
        );
    }
    Ok(out)
}

fn predict(forecaster: &dyn Forecaster, samples: &[ForecastSample]) -> Result<Vec<Array3<f32>>> {
    let views: Vec<_> = samples.iter().map(|s| s.observed.view()).collect();
    Ok(forecaster
        .forecast_batch(&views)?
        .into_iter()
        .map(|o| o.y_hat)
        .collect())
}

pub fn gen(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let d = &cfg.data;
    let per_family = d.train_sequences_per_family + d.test_sequences_per_family;
    let corpus = generate_corpus(&CorpusSpec {
        families: d.families.clone(),
        sequences_per_family: per_family,
        num_frames: d.num_frames,
        seed: d.seed,
    })?;
    let dir = cfg.data_dir();
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut sequences = Vec::with_capacity(corpus.len());
    let mut family_counts = BTreeMap::new();
    for (i, entry) in corpus.iter().enumerate() {
        let file = format!("{}.poseseq", entry.id);
        write_sequence(&entry.sequence, dir.join(&file))
            .with_context(|| format!("writing {file}"))?;
        *family_counts.entry(entry.family_id).or_insert(0) += 1;
        sequences.push(ManifestEntry {
            file,
            family_id: entry.family_id,
            split: if i % per_family < d.train_sequences_per_family {
                Split::Train
            } else {
                Split::Test
            },
        });
    }
    let manifest = DataManifest {
        fps: SYNTH_FPS,
        num_frames: d.num_frames,
        seed: d.seed,
        family_counts,
        sequences,
    };
    write_text(&dir.join("manifest.json"), &pretty(&manifest)?)?;
    ctx.record_config()?;
    ctx.log(format!(
        "wrote {} sequences to {}",
        corpus.len(),
        dir.display()
    ));
    Ok(())
}

pub fn train_cmd(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let data = load_windows(cfg, &cfg.train_families(), Split::Train)?;
    ctx.record_config()?;
    for run in cfg.runs() {
        for &seed in &cfg.seeds {
            let tc = TrainConfig {
                seed,
                prior: if run == BASELINE_RUN {
                    None
                } else {
                    cfg.train.prior
                },
                ..cfg.train.clone()
            };
            let outcome = train(&cfg.forecaster, &data, &tc)
                .with_context(|| format!("training {run} seed {seed}"))?;
            let ck = outcome.checkpoint;
            let path = cfg.checkpoint_path(&run, seed);
            ensure_parent(&path)?;
            ck.save(&path)
                .with_context(|| format!("writing {}", path.display()))?;
            let mut log = String::from("epoch,train_loss,val_a_mpjpe\n");
            for r in &ck.epoch_log {
                writeln!(log, "{},{},{}", r.epoch, r.train_loss, r.val_a_mpjpe)?;
            }
            write_text(&cfg.log_path(&run, seed), &log)?;
            if outcome.validated_on_training {
                ctx.log(format!(
                    "{run} seed {seed}: no validation sequences, scored on training windows"
                ));
            }
            ctx.log(format!(
                "{run} seed {seed}: {} windows, final val A-MPJPE {:.3} mm",
                data.len(),
                ck.final_val_a_mpjpe().unwrap_or(f64::NAN)
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunEval {
    run: String,
    seeds: Vec<u64>,
    a_mpjpe_mm: Vec<f64>,
    final_val_a_mpjpe_mm: Vec<Option<f64>>,
    a_mpjpe_std_mm: f64,
    ap_mpjpe_mm: Option<f64>,
    horizons: HorizonTable,
    curve_mm: Vec<f64>,
}

pub fn eval(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let test = load_windows(cfg, &cfg.train_families(), Split::Test)?;
    let mut runs = Vec::new();
    for run in cfg.runs() {
        let mut curve_sum: Option<Array1<f64>> = None;
        let (mut a_mpjpe, mut final_val, mut predictions) = (Vec::new(), Vec::new(), Vec::new());
        for &seed in &cfg.seeds {
            let ck = load_checkpoint(&cfg.checkpoint_path(&run, seed))?;
            let f = ck.forecaster()?;
            let curve = mean_mpjpe_curve(&test, f.as_ref())?;
            a_mpjpe.push(curve.mean().unwrap_or(0.0));
            final_val.push(ck.final_val_a_mpjpe());
            curve_sum = Some(match curve_sum {
                Some(acc) => acc + &curve,
                None => curve,
            });
            if cfg.seeds.len() >= 2 {
                predictions.push(predict(f.as_ref(), &test)?);
            }
        }
        let curve = curve_sum.expect("seeds non-empty") / cfg.seeds.len() as f64;
        let horizons = table_from_curve(curve.view(), &cfg.horizons_ms, SYNTH_FPS, test.len())?;
        let ap = if predictions.len() >= 2 {
            Some(ap_mpjpe(&predictions)?)
        } else {
            None
        };
        ctx.log(format!(
            "{run}: A-MPJPE {:.3} mm (std {:.3}) over {} seeds",
            a_mpjpe.iter().sum::<f64>() / a_mpjpe.len() as f64,
            population_std(&a_mpjpe),
            a_mpjpe.len()
        ));
        runs.push(RunEval {
            run,
            seeds: cfg.seeds.clone(),
            a_mpjpe_std_mm: population_std(&a_mpjpe),
            a_mpjpe_mm: a_mpjpe,
            final_val_a_mpjpe_mm: final_val,
            ap_mpjpe_mm: ap,
            horizons,
            curve_mm: curve.to_vec(),
        });
    }

    let reports = cfg.reports_dir();
    let mut horizons_csv = String::from("run,horizon_ms,mpjpe_mm\n");
    let mut summary_csv = String::from("run,a_mpjpe_mm,a_mpjpe_std_mm,ap_mpjpe_mm,num_seeds\n");
    let mut seeds_csv = String::from("run,seed,a_mpjpe_mm,final_val_a_mpjpe_mm\n");
    for r in &runs {
        for (h, m) in r.horizons.horizons_ms.iter().zip(&r.horizons.mpjpe_mm) {
            writeln!(horizons_csv, "{},{h},{m}", r.run)?;
        }
        let mean = r.a_mpjpe_mm.iter().sum::<f64>() / r.a_mpjpe_mm.len() as f64;
        let ap = r.ap_mpjpe_mm.map_or(String::new(), |v| v.to_string());
        writeln!(
            summary_csv,
            "{},{mean},{},{ap},{}",
            r.run,
            r.a_mpjpe_std_mm,
            r.seeds.len()
        )?;
        for ((s, a), v) in r
            .seeds
            .iter()
            .zip(&r.a_mpjpe_mm)
            .zip(&r.final_val_a_mpjpe_mm)
        {
            writeln!(
                seeds_csv,
                "{},{s},{a},{}",
                r.run,
                v.map_or(String::new(), |v| v.to_string())
            )?;
        }
    }
    write_text(&reports.join("eval_horizons.csv"), &horizons_csv)?;
    write_text(&reports.join("eval_summary.csv"), &summary_csv)?;
    write_text(&reports.join("eval_seeds.csv"), &seeds_csv)?;

    let mut gain_rows = Vec::new();
    if runs.len() == 2 {
        let (base, cand) = (&runs[0], &runs[1]);
        let g = gains(&base.horizons.mpjpe_mm, &cand.horizons.mpjpe_mm)?;
        let mut gains_csv = String::from("horizon_ms,baseline_mm,candidate_mm,gain_pct\n");
        for (i, &h) in cand.horizons.horizons_ms.iter().enumerate() {
            let (b, c, pct) = (
                base.horizons.mpjpe_mm[i],
                cand.horizons.mpjpe_mm[i],
                100.0 * g[i],
            );
            writeln!(gains_csv, "{h},{b},{c},{pct}")?;
            gain_rows.push(
                json!({"horizon_ms": h, "baseline_mm": b, "candidate_mm": c, "gain_pct": pct}),
            );
        }
        write_text(&reports.join("eval_gains.csv"), &gains_csv)?;
    }
    let doc = json!({"num_test_windows": test.len(), "runs": runs, "gains": gain_rows});
    write_text(&reports.join("eval.json"), &pretty(&doc)?)?;
    ctx.record_config()?;
    Ok(())
}

fn futures(samples: &[ForecastSample]) -> Vec<ArrayView3<'_, f32>> {
    samples.iter().map(|s| s.future.view()).collect()
}

fn load_cluster_model(cfg: &ExperimentConfig) -> Result<ClusterModel> {
    let path = cfg.cluster_dir().join("model.ckpt");
    require(&path, "cluster model (run `epu fit` first)")?;
    ClusterModel::load(&path).with_context(|| format!("loading {}", path.display()))
}

fn score_windows(
    model: &ClusterModel,
    forecaster: &dyn Forecaster,
    samples: &[ForecastSample],
) -> Result<EpUReport> {
    let preds = predict(forecaster, samples)?;
    let views: Vec<_> = preds.iter().map(|p| p.view()).collect();
    Ok(epu_score(model, &views)?)
}

pub fn epu_fit(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let ep = &cfg.epistemic;
    let seed = cfg.seeds[0];
    let data = load_windows(cfg, &ep.in_families, Split::Train)?;
    let seqs = futures(&data);
    let (ae, pre) = pretrain_autoencoder(&seqs, &ep.autoencoder, seed)?;
    ctx.log(format!(
        "autoencoder MSE {:.4} -> {:.4}",
        pre.initial_loss, pre.final_loss
    ));
    let z = ae.encode(&seqs)?;
    let k_cfg = posecast::epistemic::EstimateKConfig {
        seed,
        ..ep.estimate_k.clone()
    };
    let tsne = posecast::epistemic::Tsne {
        seed,
        ..ep.tsne.clone()
    };
    let (estimated_k, stats) = estimate_k(z.view(), &k_cfg, &tsne)?;
    let k =
        ep.k.unwrap_or_else(|| scoring_k(estimated_k, &stats.ratios));
    ctx.log(format!(
        "estimated K = {estimated_k}, fitting K = {k} on {} windows",
        data.len()
    ));
    let cluster_cfg = posecast::epistemic::ClusterConfig {
        seed,
        ..ep.cluster.clone()
    };
    let (model, report) = fit_clusters(&ae, &seqs, k, &cluster_cfg)?;
    let path = cfg.cluster_dir().join("model.ckpt");
    ensure_parent(&path)?;
    model
        .save(&path)
        .with_context(|| format!("writing {}", path.display()))?;
    let dir = cfg.cluster_dir();
    let mut pre_csv = String::from("epoch,reconstruction_mse\n");
    for (i, l) in pre.epoch_losses.iter().enumerate() {
        writeln!(pre_csv, "{},{l}", i + 1)?;
    }
    write_text(
        &cfg.out.join("logs").join("autoencoder_pretrain.csv"),
        &pre_csv,
    )?;
    let mut decision_csv = String::from("index,rho,delta,gamma\n");
    for i in 0..stats.gamma.len() {
        writeln!(
            decision_csv,
            "{i},{},{},{}",
            stats.rho[i], stats.delta[i], stats.gamma[i]
        )?;
    }
    write_text(&dir.join("decision_graph.csv"), &decision_csv)?;
    let doc = json!({
        "num_windows": data.len(),
        "estimated_k": estimated_k,
        "k": k,
        "cutoff_distance": stats.d_c,
        "gap_ratios": stats.ratios,
        "pretrain_initial_mse": pre.initial_loss,
        "pretrain_final_mse": pre.final_loss,
        "kmeans_attempt": report.kmeans_attempt,
        "refinement_steps": report.refinement_steps,
    });
    write_text(&dir.join("fit.json"), &pretty(&doc)?)?;
    ctx.record_config()?;
    Ok(())
}

fn epu_inputs(cfg: &ExperimentConfig) -> Result<(ClusterModel, Box<dyn Forecaster>)> {
    let model = load_cluster_model(cfg)?;
    let ck = load_checkpoint(&cfg.epu_checkpoint())?;
    Ok((model, ck.forecaster()?))
}

pub fn epu_score_cmd(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let (model, f) = epu_inputs(cfg)?;
    let test = load_windows(cfg, &cfg.epistemic.in_families, Split::Test)?;
    let report = score_windows(&model, f.as_ref(), &test)?;
    ctx.log(format!(
        "EpU {:.6} over {} windows (K = {})",
        report.epu,
        report.n,
        model.k()
    ));
    let reports = cfg.reports_dir();
    write_text(&reports.join("epu_score.csv"), &report.to_csv())?;
    write_text(&reports.join("epu_score.json"), &(report.to_json() + "\n"))?;
    ctx.record_config()?;
    Ok(())
}

pub fn epu_auroc(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let (model, f) = epu_inputs(cfg)?;
    let inside = score_windows(
        &model,
        f.as_ref(),
        &load_windows(cfg, &cfg.epistemic.in_families, Split::Test)?,
    )?;
    let outside = score_windows(
        &model,
        f.as_ref(),
        &load_windows(cfg, &cfg.epistemic.held_out_families, Split::Test)?,
    )?;
    let area = auroc(&inside.per_sample_entropy, &outside.per_sample_entropy)?;
    let roc = roc_curve(&inside.per_sample_entropy, &outside.per_sample_entropy)?;
    ctx.log(format!(
        "AUROC {area:.4} (EpU in-family {:.4}, held-out {:.4})",
        inside.epu, outside.epu
    ));
    let reports = cfg.reports_dir();
    let mut csv = String::from("threshold,false_positive_rate,true_positive_rate\n");
    for p in &roc {
        writeln!(
            csv,
            "{},{},{}",
            p.threshold, p.false_positive_rate, p.true_positive_rate
        )?;
    }
    write_text(&reports.join("epu_roc.csv"), &csv)?;
    let doc = json!({
        "auroc": area,
        "in_family": {"families": cfg.epistemic.in_families, "n": inside.n, "epu": inside.epu},
        "held_out": {"families": cfg.epistemic.held_out_families, "n": outside.n, "epu": outside.epu},
    });
    write_text(&reports.join("epu_auroc.json"), &pretty(&doc)?)?;
    ctx.record_config()?;
    Ok(())
}

pub fn epu_ood(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let (model, f) = epu_inputs(cfg)?;
    let test = load_windows(cfg, &cfg.epistemic.in_families, Split::Test)?;
    let preds = predict(f.as_ref(), &test)?;
    let seed = cfg.seeds[0];
    let as_samples: Vec<ForecastSample> = test
        .iter()
        .zip(preds)
        .map(|(s, y)| ForecastSample {
            future: y,
            ..s.clone()
        })
        .collect();
    let frames: Vec<_> = as_samples
        .iter()
        .enumerate()
        .map(|(i, s)| shuffle_frames(s, seed.wrapping_add(i as u64)).future)
        .collect();
    let joints: Vec<_> = as_samples
        .iter()
        .enumerate()
        .map(|(i, s)| shuffle_joints(s, seed.wrapping_add(i as u64)).future)
        .collect();
    let normal = epu_score(&model, &futures(&as_samples))?.epu;
    let frames = epu_score(&model, &frames.iter().map(|a| a.view()).collect::<Vec<_>>())?.epu;
    let joints = epu_score(&model, &joints.iter().map(|a| a.view()).collect::<Vec<_>>())?.epu;
    ctx.log(format!(
        "EpU normal {normal:.4}, frames shuffled {frames:.4}, joints shuffled {joints:.4}"
    ));
    let reports = cfg.reports_dir();
    write_text(
        &reports.join("epu_ood.csv"),
        &format!(
            "condition,epu\nnormal,{normal}\nframes_shuffled,{frames}\njoints_shuffled,{joints}\n"
        ),
    )?;
    let doc = json!({"n": test.len(), "normal": normal, "frames_shuffled": frames, "joints_shuffled": joints});
    write_text(&reports.join("epu_ood.json"), &pretty(&doc)?)?;
    ctx.record_config()?;
    Ok(())
}

pub fn report(ctx: &Ctx, checkpoints: &[PathBuf]) -> Result<()> {
    let cfg = &ctx.cfg;
    let sources: Vec<(String, PathBuf)> = if checkpoints.is_empty() {
        let run = cfg.main_run();
        cfg.seeds
            .iter()
            .map(|&s| (format!("seed{s}"), cfg.checkpoint_path(&run, s)))
            .collect()
    } else {
        checkpoints
            .iter()
            .map(|p| {
                let stem = p
                    .file_stem()
                    .map_or_else(|| "checkpoint".into(), |s| s.to_string_lossy().into_owned());
                (stem, p.clone())
            })
            .collect()
    };
    let reports = cfg.reports_dir();
    let mut comparison = String::from("family,source,t,mean_u\n");
    let mut index = Vec::new();
    for (tag, path) in &sources {
        let ck = load_checkpoint(path)?;
        let Some(prior) = &ck.prior else {
            bail!(
                "checkpoint {} lacks a prior; nothing to report",
                path.display()
            );
        };
        let family = prior.family().name();
        let grid = prior.grid()?;
        let mut csv = String::from("t,joint,u\n");
        for (t, row) in grid.outer_iter().enumerate() {
            for (j, u) in row.iter().enumerate() {
                writeln!(csv, "{},{j},{u}", t + 1)?;
            }
            writeln!(
                comparison,
                "{family},{tag},{},{}",
                t + 1,
                row.sum() / row.len() as f64
            )?;
        }
        let file = format!("curves_{family}_{tag}.csv");
        write_text(&reports.join(&file), &csv)?;
        index.push(json!({"family": family, "source": tag, "checkpoint": path, "file": file}));
    }
    write_text(&reports.join("prior_comparison.csv"), &comparison)?;
    write_text(&reports.join("curves.json"), &pretty(&index)?)?;
    ctx.record_config()?;
    ctx.log(format!(
        "wrote {} curve files to {}",
        sources.len(),
        reports.display()
    ));
    Ok(())
}
