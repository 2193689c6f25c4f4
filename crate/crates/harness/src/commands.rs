//! Subcommand implementations. Each returns the files it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use vaelens::attacks::{eigen_attack_with_metric, random_direction_attack, AttackMode};
use vaelens::data::Dataset;
use vaelens::geometry::{input_metric, MetricChoice};
use vaelens::linalg::{DenseVector, RngState};
use vaelens::metrics::{reconstruction_mse, robustness_score, score_dataset, MeanStd, RobustnessScore};
use vaelens::vae::{train, EpochLoss, VaeModel};

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::pgm;
use crate::svg;
use crate::table::{fmt_f64, Table};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "losses.csv";

/// Stream index for model initialization; training uses streams 0 and 1.
const INIT_STREAM: u64 = 100;
const BASELINE_STREAM: u64 = 200;

/// Creates `dir` and checks that a file can be written there.
pub fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let probe = dir.join(format!(".probe-{}", std::process::id()));
    fs::write(&probe, b"").map_err(|e| HarnessError::io(dir, e))?;
    fs::remove_file(&probe).map_err(|e| HarnessError::io(&probe, e))
}

pub fn new_model(cfg: &ExperimentConfig, input_dim: usize, beta: f64, seed: u64) -> Result<VaeModel> {
    Ok(VaeModel::new(
        &cfg.architecture(input_dim),
        beta,
        cfg.likelihood()?,
        &mut RngState::derive(seed, INIT_STREAM),
    )?)
}

pub fn train_model(cfg: &ExperimentConfig, data: &Dataset, beta: f64, seed: u64) -> Result<(VaeModel, Vec<EpochLoss>)> {
    let mut model = new_model(cfg, data.input_dim, beta, seed)?;
    let history = train(&mut model, &data.samples, &cfg.train.to_config(beta, seed))?;
    Ok((model, history))
}

pub fn loss_table(history: &[EpochLoss]) -> Table {
    let mut t = Table::new(&["epoch", "recon", "kl", "mixup", "total"]);
    for e in history {
        t.push(vec![e.epoch.to_string(), fmt_f64(e.recon), fmt_f64(e.kl), fmt_f64(e.mixup), fmt_f64(e.total)]);
    }
    t
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    prepare_output_dir(&cfg.output_dir)?;
    let (train_set, _) = cfg.load_data()?;
    let (model, history) = train_model(cfg, &train_set, cfg.train.beta, cfg.seeds[0])?;
    let ckpt = cfg.output_dir.join(CHECKPOINT_FILE);
    checkpoint::save(&model, &ckpt)?;
    let losses = cfg.output_dir.join(LOSS_FILE);
    loss_table(&history).write(&losses)?;
    Ok(vec![ckpt, losses])
}

/// Loads a checkpoint and checks it against the configured architecture.
pub fn load_model(cfg: &ExperimentConfig, path: &Path, input_dim: usize) -> Result<VaeModel> {
    let model = checkpoint::load(path)?;
    let expected = new_model(cfg, input_dim, model.beta(), 0)?;
    checkpoint::check_architecture(&model, &expected)?;
    if model.likelihood() != expected.likelihood() {
        return Err(HarnessError::Checkpoint(format!(
            "checkpoint uses the {} likelihood but the configuration expects {}",
            model.likelihood().name(),
            expected.likelihood().name()
        )));
    }
    Ok(model)
}

fn mean_recon_mse(model: &VaeModel, x: &[f64]) -> Result<f64> {
    Ok(reconstruction_mse(x, &model.reconstruct(x)?)?)
}

struct AttackRow {
    sample_id: usize,
    k: usize,
    delta: f64,
    latent_shift: f64,
    mse_original: f64,
    mse_corrupted: f64,
    norm: f64,
    random_shift: f64,
    status: String,
    corrupted: Option<DenseVector>,
}

fn attack_sample(
    model: &VaeModel,
    x: &[f64],
    id: usize,
    cfg: &ExperimentConfig,
    seed: u64,
    keep_images: bool,
) -> Result<Vec<AttackRow>> {
    let metric = input_metric(model, x, cfg.metric_source()?)?;
    let mode = cfg.attack_mode()?;
    let mse_original = mean_recon_mse(model, x)?;
    let mut rng = RngState::derive(seed ^ BASELINE_STREAM, id as u64);
    let mut rows = Vec::new();
    for &k in &cfg.attack.directions {
        for &delta in &cfg.attack.deltas {
            let row = if delta == 0.0 {
                AttackRow {
                    sample_id: id,
                    k,
                    delta,
                    latent_shift: 0.0,
                    mse_original,
                    mse_corrupted: mse_original,
                    norm: 0.0,
                    random_shift: 0.0,
                    status: "ok".into(),
                    corrupted: keep_images.then(|| x.to_vec()),
                }
            } else {
                match eigen_attack_with_metric(model, x, &metric, delta, k, mode) {
                    Ok(r) => {
                        let norm = r.perturbation_norm();
                        let random_shift = if norm > 0.0 {
                            random_direction_attack(model, x, norm, &mut rng)?.latent_shift
                        } else {
                            0.0
                        };
                        AttackRow {
                            sample_id: id,
                            k,
                            delta,
                            latent_shift: r.latent_shift,
                            mse_original,
                            mse_corrupted: r.recon_mse,
                            norm,
                            random_shift,
                            status: "ok".into(),
                            corrupted: keep_images.then_some(r.x_corrupted),
                        }
                    }
                    Err(vaelens::Error::Rank { .. }) => AttackRow {
                        sample_id: id,
                        k,
                        delta,
                        latent_shift: f64::NAN,
                        mse_original,
                        mse_corrupted: f64::NAN,
                        norm: f64::NAN,
                        random_shift: f64::NAN,
                        status: "rank-deficient".into(),
                        corrupted: None,
                    },
                    Err(e) => return Err(e.into()),
                }
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

const IMAGE_SAMPLES: usize = 8;

pub fn cmd_attack(cfg: &ExperimentConfig, ckpt: &Path) -> Result<Vec<PathBuf>> {
    if cfg.attack.deltas.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(HarnessError::Usage("attack deltas must be finite and non-negative".into()));
    }
    if cfg.attack.directions.is_empty() || cfg.attack.directions.contains(&0) {
        return Err(HarnessError::Usage("attack directions are 1-based and must be non-empty".into()));
    }
    prepare_output_dir(&cfg.output_dir)?;
    let (_, test) = cfg.load_data()?;
    let model = load_model(cfg, ckpt, test.input_dim)?;
    let images = cfg.attack.images && pgm::square_side(test.input_dim).is_some();
    let per_sample: Vec<Vec<AttackRow>> = test
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, x)| attack_sample(&model, x, i, cfg, cfg.seeds[0], images && i < IMAGE_SAMPLES))
        .collect::<Result<_>>()?;

    let mut t = Table::new(&[
        "sample_id",
        "k",
        "delta",
        "latent_shift",
        "recon_mse_original",
        "recon_mse_corrupted",
        "input_perturbation_norm",
        "random_latent_shift",
        "status",
    ]);
    let mut groups: BTreeMap<(usize, usize), Vec<&AttackRow>> = BTreeMap::new();
    for rows in &per_sample {
        for (j, r) in rows.iter().enumerate() {
            t.push(vec![
                r.sample_id.to_string(),
                r.k.to_string(),
                fmt_f64(r.delta),
                fmt_f64(r.latent_shift),
                fmt_f64(r.mse_original),
                fmt_f64(r.mse_corrupted),
                fmt_f64(r.norm),
                fmt_f64(r.random_shift),
                r.status.clone(),
            ]);
            if r.status == "ok" {
                groups.entry((r.k, j)).or_default().push(r);
            }
        }
    }
    let out = cfg.output_dir.join("attack.csv");
    t.write(&out)?;

    let mut s = Table::new(&[
        "k",
        "delta",
        "count",
        "latent_shift_mean",
        "random_latent_shift_mean",
        "recon_mse_original_mean",
        "recon_mse_corrupted_mean",
        "recon_mse_corrupted_std",
    ]);
    for rows in groups.values() {
        let col = |f: fn(&AttackRow) -> f64| MeanStd::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
        let corrupted = col(|r| r.mse_corrupted);
        s.push(vec![
            rows[0].k.to_string(),
            fmt_f64(rows[0].delta),
            rows.len().to_string(),
            fmt_f64(col(|r| r.latent_shift).mean),
            fmt_f64(col(|r| r.random_shift).mean),
            fmt_f64(col(|r| r.mse_original).mean),
            fmt_f64(corrupted.mean),
            fmt_f64(corrupted.std),
        ]);
    }
    let summary = cfg.output_dir.join("attack_summary.csv");
    s.write(&summary)?;
    let mut files = vec![out, summary];

    if images {
        let mut grid: Vec<Vec<&[f64]>> = Vec::new();
        for (i, rows) in per_sample.iter().take(IMAGE_SAMPLES).enumerate() {
            let mut row: Vec<&[f64]> = vec![&test.samples[i]];
            row.extend(rows.iter().filter_map(|r| r.corrupted.as_deref()));
            grid.push(row);
        }
        let p = cfg.output_dir.join("attack_grid.pgm");
        pgm::write_grid(&p, &grid)?;
        files.push(p);
    }
    Ok(files)
}

/// Mean and std of the latent shift along the top eigendirection for each delta,
/// with a leading zero-step row.
pub fn latent_distance_table(model: &VaeModel, samples: &[DenseVector], deltas: &[f64], mode: AttackMode, source: MetricChoice) -> Result<Table> {
    let shifts: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|x| -> Result<Vec<f64>> {
            let metric = input_metric(model, x, source)?;
            let mut out = vec![0.0];
            for &d in deltas {
                out.push(eigen_attack_with_metric(model, x, &metric, d, 1, mode)?.latent_shift);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new(&["delta", "mean_shift", "std_shift", "count"]);
    for (j, d) in std::iter::once(0.0).chain(deltas.iter().copied()).enumerate() {
        let col: Vec<f64> = shifts.iter().map(|s| s[j]).collect();
        let ms = MeanStd::of(&col);
        t.push(vec![fmt_f64(d), fmt_f64(ms.mean), fmt_f64(ms.std), col.len().to_string()]);
    }
    Ok(t)
}

pub fn cmd_latent_distance(cfg: &ExperimentConfig, ckpt: &Path) -> Result<Vec<PathBuf>> {
    prepare_output_dir(&cfg.output_dir)?;
    let (_, test) = cfg.load_data()?;
    let model = load_model(cfg, ckpt, test.input_dim)?;
    let t = latent_distance_table(&model, &test.samples, &cfg.delta_grid.values(), cfg.attack_mode()?, cfg.metric_source()?)?;
    let out = cfg.output_dir.join("latent_distance.csv");
    t.write(&out)?;
    Ok(vec![out])
}

fn score_cells(s: &RobustnessScore) -> Vec<String> {
    vec![
        fmt_f64(s.spectral_radius),
        fmt_f64(s.vn_entropy_normalized),
        fmt_f64(s.vn_entropy_raw),
        s.rank.to_string(),
        s.degenerate.to_string(),
    ]
}

const SCORE_COLUMNS: [&str; 5] = ["spectral_radius", "vn_entropy_normalized", "vn_entropy_raw", "rank", "degenerate"];

pub fn cmd_score(cfg: &ExperimentConfig, ckpt: &Path) -> Result<Vec<PathBuf>> {
    prepare_output_dir(&cfg.output_dir)?;
    let (_, test) = cfg.load_data()?;
    let model = load_model(cfg, ckpt, test.input_dim)?;
    let table = score_dataset(&model, &test.samples, cfg.metric_source()?)?;
    let mut header = vec!["sample_id"];
    header.extend(SCORE_COLUMNS);
    let mut t = Table::new(&header);
    for (i, s) in &table.rows {
        let mut row = vec![i.to_string()];
        row.extend(score_cells(s));
        t.push(row);
    }
    let out = cfg.output_dir.join("scores.csv");
    t.write(&out)?;
    let mut s = Table::new(&["score", "mean", "std", "count", "skipped"]);
    for (name, ms) in [
        ("spectral_radius", table.summary.spectral_radius),
        ("vn_entropy_normalized", table.summary.vn_entropy_normalized),
        ("vn_entropy_raw", table.summary.vn_entropy_raw),
    ] {
        s.push(vec![
            name.into(),
            fmt_f64(ms.mean),
            fmt_f64(ms.std),
            table.summary.count.to_string(),
            table.failures.len().to_string(),
        ]);
    }
    let summary = cfg.output_dir.join("score_summary.csv");
    s.write(&summary)?;
    for (i, e) in &table.failures {
        eprintln!("sample {i} skipped: {e}");
    }
    Ok(vec![out, summary])
}

struct JobOutput {
    beta: f64,
    seed: u64,
    scores: Vec<(usize, RobustnessScore)>,
    /// `(sample_id, k, delta, mse, latent_shift)`; NaN marks a skipped direction.
    attacks: Vec<(usize, usize, f64, f64, f64)>,
}

fn sweep_job(cfg: &ExperimentConfig, train_set: &Dataset, test: &Dataset, beta: f64, seed: u64, deltas: &[f64]) -> Result<JobOutput> {
    let (model, _) = train_model(cfg, train_set, beta, seed)?;
    let source = cfg.metric_source()?;
    let mode = cfg.attack_mode()?;
    let per_sample: Vec<(RobustnessScore, Vec<(usize, usize, f64, f64, f64)>)> = test
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, x)| -> Result<_> {
            let metric = input_metric(&model, x, source)?;
            let score = robustness_score(metric.eig()?)?;
            let mut rows = Vec::new();
            for k in 1..=cfg.eigen_directions {
                for &d in deltas {
                    match eigen_attack_with_metric(&model, x, &metric, d, k, mode) {
                        Ok(r) => rows.push((i, k, d, r.recon_mse, r.latent_shift)),
                        Err(vaelens::Error::Rank { .. }) => rows.push((i, k, d, f64::NAN, f64::NAN)),
                        Err(e) => return Err(e.into()),
                    }
                }
            }
            Ok((score, rows))
        })
        .collect::<Result<_>>()?;
    let mut scores = Vec::new();
    let mut attacks = Vec::new();
    for (i, (s, rows)) in per_sample.into_iter().enumerate() {
        scores.push((i, s));
        attacks.extend(rows);
    }
    Ok(JobOutput { beta, seed, scores, attacks })
}

/// Trains one model per `(beta, seed)` pair, scores the test set and sweeps
/// the step size along the top eigendirections. Jobs run in parallel and are
/// written in grid order. Failed jobs are listed in `sweep_failures.csv` and
/// reported as a partial failure after all outputs are written.
pub fn cmd_beta_sweep(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    prepare_output_dir(&cfg.output_dir)?;
    let (train_set, test) = cfg.load_data()?;
    let deltas = cfg.delta_grid.values();
    let jobs: Vec<(f64, u64)> = cfg.beta_grid.values().into_iter().flat_map(|b| cfg.seeds.iter().map(move |&s| (b, s))).collect();
    let results: Vec<(f64, u64, Result<JobOutput>)> = jobs
        .par_iter()
        .map(|&(b, s)| (b, s, sweep_job(cfg, &train_set, &test, b, s, &deltas)))
        .collect();

    let mut long = Table::new(&[
        "beta",
        "seed",
        "sample_id",
        "direction_index",
        "delta",
        "mse",
        "latent_shift",
        "spectral_radius",
        "vn_entropy",
        "flagged",
    ]);
    let mut header = vec!["beta", "seed", "sample_id"];
    header.extend(SCORE_COLUMNS);
    let mut score_t = Table::new(&header);
    let mut failures = Table::new(&["beta", "seed", "error"]);
    let mut per_beta: Vec<(f64, Vec<(f64, f64, f64)>)> = Vec::new();
    for (b, s, r) in &results {
        match r {
            Ok(job) => {
                for (i, sc) in &job.scores {
                    let mut row = vec![fmt_f64(job.beta), job.seed.to_string(), i.to_string()];
                    row.extend(score_cells(sc));
                    score_t.push(row);
                }
                for &(i, k, d, mse, shift) in &job.attacks {
                    let sc = &job.scores[i].1;
                    let flagged = !(mse.is_finite() && shift.is_finite());
                    long.push(vec![
                        fmt_f64(job.beta),
                        job.seed.to_string(),
                        i.to_string(),
                        k.to_string(),
                        fmt_f64(d),
                        fmt_f64(mse),
                        fmt_f64(shift),
                        fmt_f64(sc.spectral_radius),
                        fmt_f64(sc.vn_entropy_normalized),
                        flagged.to_string(),
                    ]);
                }
                let col = |f: fn(&RobustnessScore) -> f64| MeanStd::of(&job.scores.iter().map(|(_, s)| f(s)).collect::<Vec<_>>()).mean;
                let means = (col(|s| s.spectral_radius), col(|s| s.vn_entropy_normalized), col(|s| s.vn_entropy_raw));
                match per_beta.last_mut() {
                    Some((pb, v)) if *pb == *b => v.push(means),
                    _ => per_beta.push((*b, vec![means])),
                }
            }
            Err(e) => {
                eprintln!("beta {b} seed {s} failed: {e}");
                failures.push(vec![fmt_f64(*b), s.to_string(), e.to_string()]);
            }
        }
    }
    let mut summary = Table::new(&[
        "beta",
        "seeds",
        "spectral_radius_mean",
        "spectral_radius_std",
        "vn_entropy_mean",
        "vn_entropy_std",
        "vn_entropy_raw_mean",
        "vn_entropy_raw_std",
    ]);
    for (b, v) in &per_beta {
        let ms = |f: fn(&(f64, f64, f64)) -> f64| MeanStd::of(&v.iter().map(f).collect::<Vec<_>>());
        let (r, e, raw) = (ms(|t| t.0), ms(|t| t.1), ms(|t| t.2));
        summary.push(vec![
            fmt_f64(*b),
            v.len().to_string(),
            fmt_f64(r.mean),
            fmt_f64(r.std),
            fmt_f64(e.mean),
            fmt_f64(e.std),
            fmt_f64(raw.mean),
            fmt_f64(raw.std),
        ]);
    }
    let dir = &cfg.output_dir;
    let mut files = Vec::new();
    for (name, t) in [("sweep.csv", &long), ("sweep_scores.csv", &score_t), ("sweep_summary.csv", &summary)] {
        let p = dir.join(name);
        t.write(&p)?;
        files.push(p);
    }
    if !failures.rows.is_empty() {
        let p = dir.join("sweep_failures.csv");
        failures.write(&p)?;
        return Err(HarnessError::Partial { failed: failures.rows.len(), total: jobs.len() });
    }
    Ok(files)
}

/// Values of `value` grouped by the text of `key`, in order of first appearance.
fn grouped(t: &Table, key: Option<&str>, value: &str, keep: &[bool]) -> Result<Vec<svg::Series<f64>>> {
    let vals = t.numeric(value)?;
    let keys: Vec<String> = match key {
        Some(k) if t.column(k).is_some() => t.text(k)?.into_iter().map(|s| format!("{k}={s}")).collect(),
        _ => vec![value.to_string(); vals.len()],
    };
    let mut out: Vec<svg::Series<f64>> = Vec::new();
    for ((k, v), &ok) in keys.into_iter().zip(vals).zip(keep) {
        if !ok {
            continue;
        }
        match out.iter_mut().find(|(n, _)| *n == k) {
            Some((_, s)) => s.push(v),
            None => out.push((k, vec![v])),
        }
    }
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into())
}

/// Renders SVG charts for each CSV according to its columns.
pub fn cmd_report(inputs: &[PathBuf], out_dir: &Path, bins: usize) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(HarnessError::Usage("report needs at least one CSV file".into()));
    }
    prepare_output_dir(out_dir)?;
    let mut files = Vec::new();
    for path in inputs {
        let t = Table::read(path)?;
        let name = stem(path);
        let mut charts: Vec<(String, String)> = Vec::new();
        if t.has(&["epoch", "total"]) {
            let x = t.numeric("epoch")?;
            let mut series = Vec::new();
            for col in ["recon", "kl", "mixup", "total"] {
                if t.column(col).is_some() {
                    series.push((col.to_string(), x.iter().copied().zip(t.numeric(col)?).collect()));
                }
            }
            charts.push(("loss".into(), svg::line_chart(&series, "training loss", "epoch", "loss", false)));
        } else if t.has(&["delta", "mean_shift"]) {
            let pts = t.numeric("delta")?.into_iter().zip(t.numeric("mean_shift")?).collect();
            charts.push((
                "shift".into(),
                svg::line_chart(&[("mean latent shift".into(), pts)], "latent shift along the top eigendirection", "delta", "latent shift", true),
            ));
        } else if t.has(&["spectral_radius"]) {
            // sweep rows repeat each sample's scores once per (direction, delta)
            let keep: Vec<bool> = if t.has(&["direction_index", "delta"]) {
                let (k, d) = (t.numeric("direction_index")?, t.numeric("delta")?);
                let d0 = d.first().copied().unwrap_or(0.0);
                k.iter().zip(&d).map(|(k, d)| *k == 1.0 && *d == d0).collect()
            } else {
                vec![true; t.rows.len()]
            };
            let entropy = if t.column("vn_entropy_normalized").is_some() { "vn_entropy_normalized" } else { "vn_entropy" };
            charts.push((
                "spectral_radius".into(),
                svg::histogram(&grouped(&t, Some("beta"), "spectral_radius", &keep)?, bins, "spectral radius", "spectral radius"),
            ));
            if t.column(entropy).is_some() {
                charts.push((
                    "entropy".into(),
                    svg::histogram(&grouped(&t, Some("beta"), entropy, &keep)?, bins, "Von Neumann entropy", "entropy (nats)"),
                ));
            }
            if t.has(&["direction_index", "delta", "mse", "beta"]) {
                let (k, d, m, b) = (t.numeric("direction_index")?, t.numeric("delta")?, t.numeric("mse")?, t.text("beta")?);
                let mut acc: Vec<(String, BTreeMap<u64, (f64, f64)>)> = Vec::new();
                for i in 0..t.rows.len() {
                    if k[i] != 1.0 || !m[i].is_finite() {
                        continue;
                    }
                    let key = format!("beta={}", b[i]);
                    let idx = match acc.iter().position(|(n, _)| *n == key) {
                        Some(p) => p,
                        None => {
                            acc.push((key, BTreeMap::new()));
                            acc.len() - 1
                        }
                    };
                    let e = acc[idx].1.entry(d[i].to_bits()).or_insert((0.0, 0.0));
                    e.0 += m[i];
                    e.1 += 1.0;
                }
                let series: Vec<svg::Series<(f64, f64)>> = acc
                    .into_iter()
                    .map(|(n, m)| {
                        let mut pts: Vec<(f64, f64)> = m.into_iter().map(|(d, (s, c))| (f64::from_bits(d), s / c)).collect();
                        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                        (n, pts)
                    })
                    .collect();
                charts.push((
                    "mse_vs_delta".into(),
                    svg::line_chart(&series, "corrupted reconstruction error", "delta", "mean MSE", true),
                ));
            }
        } else if t.has(&["beta", "spectral_radius_mean", "vn_entropy_mean"]) {
            let b = t.numeric("beta")?;
            for (col, title) in [("spectral_radius_mean", "mean spectral radius"), ("vn_entropy_mean", "mean Von Neumann entropy")] {
                let pts = b.iter().copied().zip(t.numeric(col)?).collect();
                charts.push((col.into(), svg::line_chart(&[(col.into(), pts)], title, "beta", title, true)));
            }
        } else if t.has(&["k", "delta", "latent_shift_mean", "random_latent_shift_mean", "recon_mse_corrupted_mean"]) {
            let (k, d) = (t.text("k")?, t.numeric("delta")?);
            let by_k = |col: &str, label: &str| -> Result<Vec<svg::Series<(f64, f64)>>> {
                let v = t.numeric(col)?;
                let mut out: Vec<svg::Series<(f64, f64)>> = Vec::new();
                for i in 0..v.len() {
                    let key = format!("{label} k={}", k[i]);
                    match out.iter_mut().find(|(n, _)| *n == key) {
                        Some((_, s)) => s.push((d[i], v[i])),
                        None => out.push((key, vec![(d[i], v[i])])),
                    }
                }
                Ok(out)
            };
            let mut shift = by_k("latent_shift_mean", "eigen")?;
            shift.extend(by_k("random_latent_shift_mean", "random")?);
            charts.push(("latent_shift".into(), svg::line_chart(&shift, "mean latent shift", "delta", "shift", false)));
            charts.push((
                "recon_mse".into(),
                svg::line_chart(&by_k("recon_mse_corrupted_mean", "eigen")?, "mean corrupted reconstruction MSE", "delta", "MSE", false),
            ));
        } else if t.has(&["score", "mean", "std"]) {
            // a handful of summary numbers; nothing worth plotting
        } else if t.has(&["recon_mse_corrupted", "delta"]) {
            let keep = vec![true; t.rows.len()];
            charts.push((
                "recon_mse".into(),
                svg::histogram(&grouped(&t, Some("delta"), "recon_mse_corrupted", &keep)?, bins, "corrupted reconstruction MSE", "MSE"),
            ));
            if t.column("latent_shift").is_some() {
                charts.push((
                    "latent_shift".into(),
                    svg::histogram(&grouped(&t, Some("delta"), "latent_shift", &keep)?, bins, "latent shift", "shift"),
                ));
            }
        } else {
            let keep = vec![true; t.rows.len()];
            for col in &t.header {
                if let Ok(series) = grouped(&t, None, col, &keep) {
                    charts.push((col.clone(), svg::histogram(&series, bins, col, col)));
                }
            }
        }
        for (suffix, body) in charts {
            let p = out_dir.join(format!("{name}_{suffix}.svg"));
            crate::checkpoint::write_atomic(&p, body.as_bytes())?;
            files.push(p);
        }
    }
    Ok(files)
}
