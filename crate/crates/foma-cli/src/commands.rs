//! Subcommand implementations. All outputs are plain overwrites with no
//! timestamps, so rerunning a command reproduces identical files.

use std::path::{Path, PathBuf};

use foma::augment::{KStrategy, Method};
use foma::dimension::twonn_id;
use foma::model::Checkpoint;
use foma::train::{label_distribution, lambda_sweep, train, KSpec, RunRecord};
use foma::{Error, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;

pub const OUTPUT_SCHEMA_VERSION: u32 = 1;

/// Output directory precedence: --out flag, then $FOMA_OUT_DIR, then the
/// config's out_dir.
fn resolve_out_dir(flag: Option<PathBuf>, cfg: Option<&ExperimentConfig>) -> PathBuf {
    if let Some(dir) = flag {
        return dir;
    }
    if let Ok(dir) = std::env::var("FOMA_OUT_DIR") {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    cfg.map(|c| c.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| Error::Io(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, content)
        .map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))
}

fn config_dir(config_path: &Path) -> PathBuf {
    config_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

#[derive(Serialize)]
struct RunArtifact<'a> {
    schema_version: u32,
    dataset: &'a str,
    #[serde(flatten)]
    record: &'a RunRecord,
}

pub fn cmd_train(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let cfg = ExperimentConfig::load(config_path)?;
    let train_cfg = cfg.train_config(seed)?;
    let dataset = cfg.load_dataset(&config_dir(config_path))?;
    let out_dir = resolve_out_dir(out, Some(&cfg));

    let outcome = train(&train_cfg, &dataset)?;
    let record = &outcome.record;

    let run_json = serde_json::to_string_pretty(&RunArtifact {
        schema_version: OUTPUT_SCHEMA_VERSION,
        dataset: &cfg.dataset,
        record,
    })
    .map_err(|e| Error::Io(format!("serialize run record: {e}")))?;
    write_file(&out_dir.join("run.json"), &run_json)?;

    let mut history = String::from("epoch,train_loss,val_rmse,test_rmse\n");
    for e in &record.history {
        history.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch, e.train_loss, e.val_rmse, e.test_rmse
        ));
    }
    write_file(&out_dir.join("history.csv"), &history)?;

    let ckpt = serde_json::to_string(&Checkpoint::from_model(&outcome.model))
        .map_err(|e| Error::Io(format!("serialize checkpoint: {e}")))?;
    write_file(&out_dir.join("checkpoint.json"), &ckpt)?;

    println!(
        "train: dataset={} method={:?} seed={} best_epoch={} val_rmse={:.6} test_rmse={:.6}",
        cfg.dataset,
        cfg.method,
        train_cfg.seed,
        record.best_epoch,
        record.best_val_rmse,
        record.test_rmse
    );
    Ok(())
}

#[derive(Serialize, Clone)]
struct CompareRow {
    config: String,
    dataset: String,
    method: String,
    seeds_completed: usize,
    mean_test_rmse: Option<f64>,
    std_test_rmse: Option<f64>,
    mean_test_mape: Option<f64>,
    mean_final_gap: Option<f64>,
    errors: usize,
    best: bool,
}

#[derive(Serialize)]
struct CompareArtifact {
    schema_version: u32,
    seeds: Vec<u64>,
    rows: Vec<CompareRow>,
    /// Per-run failures, keyed "config:seed".
    failures: Vec<(String, String)>,
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

pub fn cmd_compare(config_paths: &[PathBuf], seeds: &[u64], out: Option<PathBuf>) -> Result<()> {
    if config_paths.is_empty() {
        return Err(Error::Config("compare: need at least one config".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("compare: need at least one seed".into()));
    }

    let mut rows: Vec<CompareRow> = Vec::new();
    let mut failures: Vec<(String, String)> = Vec::new();
    let mut out_dir_from_cfg = None;

    // Deterministic order: configs sorted by name, seeds as given.
    let mut ordered: Vec<&PathBuf> = config_paths.iter().collect();
    ordered.sort();

    for path in ordered {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let cfg = ExperimentConfig::load(path)?;
        if out_dir_from_cfg.is_none() {
            out_dir_from_cfg = Some(cfg.out_dir.clone());
        }
        let dataset = cfg.load_dataset(&config_dir(path))?;

        let mut rmses = Vec::new();
        let mut mapes = Vec::new();
        let mut gaps = Vec::new();
        let mut errors = 0usize;
        for &seed in seeds {
            let train_cfg = cfg.train_config(Some(seed))?;
            match train(&train_cfg, &dataset) {
                Ok(outcome) => {
                    rmses.push(outcome.record.test_rmse);
                    if let Some(m) = outcome.record.test_mape {
                        mapes.push(m);
                    }
                    gaps.push(outcome.record.final_gap);
                }
                Err(e) => {
                    // Recorded, aggregation continues with the other runs.
                    errors += 1;
                    failures.push((format!("{name}:{seed}"), e.to_string()));
                }
            }
        }
        let (mean_rmse, std_rmse) = mean_std(&rmses);
        let (mean_mape, _) = mean_std(&mapes);
        let (mean_gap, _) = mean_std(&gaps);
        rows.push(CompareRow {
            config: name,
            dataset: cfg.dataset.clone(),
            method: format!("{:?}", cfg.method).to_lowercase(),
            seeds_completed: rmses.len(),
            mean_test_rmse: mean_rmse,
            std_test_rmse: std_rmse,
            mean_test_mape: mean_mape,
            mean_final_gap: mean_gap,
            errors,
            best: false,
        });
    }

    // Flag the lowest mean test RMSE per dataset.
    let datasets: Vec<String> = {
        let mut d: Vec<String> = rows.iter().map(|r| r.dataset.clone()).collect();
        d.sort();
        d.dedup();
        d
    };
    for ds in &datasets {
        let best_idx = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| &r.dataset == ds && r.mean_test_rmse.is_some())
            .min_by(|(_, a), (_, b)| {
                a.mean_test_rmse
                    .unwrap()
                    .partial_cmp(&b.mean_test_rmse.unwrap())
                    .unwrap()
            })
            .map(|(i, _)| i);
        if let Some(i) = best_idx {
            rows[i].best = true;
        }
    }

    let out_dir = if let Some(dir) = out {
        dir
    } else if let Ok(dir) = std::env::var("FOMA_OUT_DIR") {
        PathBuf::from(dir)
    } else {
        out_dir_from_cfg.unwrap_or_else(|| PathBuf::from("runs"))
    };

    let mut csv = String::from(
        "config,dataset,method,seeds_completed,mean_test_rmse,std_test_rmse,\
         mean_test_mape,mean_final_gap,errors,best\n",
    );
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.config,
            r.dataset,
            r.method,
            r.seeds_completed,
            opt(r.mean_test_rmse),
            opt(r.std_test_rmse),
            opt(r.mean_test_mape),
            opt(r.mean_final_gap),
            r.errors,
            r.best
        ));
    }
    write_file(&out_dir.join("compare.csv"), &csv)?;

    let json = serde_json::to_string_pretty(&CompareArtifact {
        schema_version: OUTPUT_SCHEMA_VERSION,
        seeds: seeds.to_vec(),
        rows: rows.clone(),
        failures,
    })
    .map_err(|e| Error::Io(format!("serialize comparison: {e}")))?;
    write_file(&out_dir.join("compare.json"), &json)?;

    for r in &rows {
        println!(
            "compare: {} ({}) mean_test_rmse={} best={}",
            r.config,
            r.dataset,
            opt(r.mean_test_rmse),
            r.best
        );
    }
    Ok(())
}

pub fn cmd_sweep_lambda(
    checkpoint_path: &Path,
    config_path: &Path,
    grid: usize,
    split: &str,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = ExperimentConfig::load(config_path)?;
    let dataset = cfg.load_dataset(&config_dir(config_path))?;
    let out_dir = resolve_out_dir(out, Some(&cfg));

    let text = std::fs::read_to_string(checkpoint_path).map_err(|e| {
        Error::Io(format!(
            "cannot read checkpoint {}: {e}",
            checkpoint_path.display()
        ))
    })?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| {
        Error::Io(format!(
            "bad checkpoint {}: {e}",
            checkpoint_path.display()
        ))
    })?;
    let model = ckpt.into_model()?;

    let (x, y) = match split {
        "train" => dataset.train_xy(),
        "val" => dataset.val_xy(),
        "test" => dataset.test_xy(),
        other => {
            return Err(Error::Config(format!(
                "sweep-lambda: split must be train/val/test, got {other:?}"
            )))
        }
    };

    // k policy for the sweep: explained variance when the config uses rho,
    // otherwise the dataset-level TwoNN estimate as a fixed k.
    let kspec = if cfg.method == Method::FomaRho
        || (cfg.method == Method::Foma && cfg.k_strategy == KStrategy::Rho)
    {
        KSpec::Rho(cfg.rho)
    } else {
        let joint = {
            let mut m = nalgebra::DMatrix::zeros(x.nrows(), x.ncols() + y.ncols());
            m.view_mut((0, 0), (x.nrows(), x.ncols())).copy_from(&x);
            m.view_mut((0, x.ncols()), (y.nrows(), y.ncols())).copy_from(&y);
            m
        };
        KSpec::Fixed(twonn_id(&joint, 0.0)?.k)
    };

    let curve = lambda_sweep(&model, &x, &y, cfg.batch_size, kspec, cfg.sv_mode, grid)?;
    let mut csv = String::from("lambda,mse\n");
    for (l, m) in &curve {
        csv.push_str(&format!("{l},{m}\n"));
    }
    write_file(&out_dir.join("sweep.csv"), &csv)?;

    let hist = label_distribution(&x, &y, &[0.0, 0.5, 1.0], cfg.batch_size, kspec, cfg.sv_mode, 20)?;
    for (lambda, counts) in &hist.per_lambda {
        let mut hcsv = String::from("bin_lo,bin_hi,original,transformed\n");
        for b in 0..counts.len() {
            hcsv.push_str(&format!(
                "{},{},{},{}\n",
                hist.bin_edges[b],
                hist.bin_edges[b + 1],
                hist.original[b],
                counts[b]
            ));
        }
        let tag = format!("{lambda}").replace('.', "_");
        write_file(&out_dir.join(format!("label_hist_lambda_{tag}.csv")), &hcsv)?;
    }

    let (argmin, min_mse) = curve
        .iter()
        .copied()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .expect("grid >= 2");
    let plain = curve.last().expect("grid >= 2").1;
    let interior = min_mse < plain && argmin > 0.0 && argmin < 1.0;
    println!(
        "sweep: grid={grid} split={split} min_mse={min_mse:.6} at lambda={argmin:.3} \
         plain_mse={plain:.6} interior_minimum={interior}"
    );
    Ok(())
}

pub fn cmd_estimate_id(
    data: Option<&Path>,
    features: usize,
    labels: usize,
    header: bool,
    synthetic: Option<&str>,
    discard: f64,
    seed: u64,
) -> Result<()> {
    let points = match (data, synthetic) {
        (Some(path), None) => {
            let table = foma::data::load_csv(path, features, labels, header)?;
            let (n, nf, nl) = (table.x.nrows(), table.x.ncols(), table.y.ncols());
            let mut m = nalgebra::DMatrix::zeros(n, nf + nl);
            m.view_mut((0, 0), (n, nf)).copy_from(&table.x);
            m.view_mut((0, nf), (n, nl)).copy_from(&table.y);
            m
        }
        (None, Some(spec)) => {
            let parts: Vec<usize> = spec
                .split(',')
                .map(|p| p.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| {
                    Error::Config(format!("estimate-id: bad --synthetic spec {spec:?}, want d,D,n"))
                })?;
            if parts.len() != 3 {
                return Err(Error::Config(format!(
                    "estimate-id: --synthetic wants exactly d,D,n, got {spec:?}"
                )));
            }
            foma::data::synthetic_manifold(parts[0], parts[1], parts[2], seed)?
        }
        _ => {
            return Err(Error::Config(
                "estimate-id: pass exactly one of --data or --synthetic".into(),
            ))
        }
    };
    let est = twonn_id(&points, discard)?;
    println!(
        "{{\"schema_version\":{},\"d_hat\":{},\"k\":{},\"n_used\":{},\"n_duplicates\":{}}}",
        OUTPUT_SCHEMA_VERSION, est.d_hat, est.k, est.n_used, est.n_duplicates
    );
    Ok(())
}
