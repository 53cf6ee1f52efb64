//! The subcommands. Each writes its resolved `config.toml` next to its
//! outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde_json::{json, Map, Value};

use dtan_core::baselines::{dba, dba_init, soft_dtw_barycenter};
use dtan_core::cpab::Tessellation;
use dtan_core::data::{gen_synthetic, load_ucr, write_rows, write_ucr, Dataset};
use dtan_core::eval::{ncc_evaluate, pca_aligned, timing_harness, variance_reduction, NccMethod, TimedMethod};
use dtan_core::locnet::{train as train_model, AlignmentModel};
use dtan_core::losses::class_means;
use dtan_core::warping::Signal;

use crate::config::RunConfig;
use crate::output::{fmt, num, OutDir};
use crate::CliError;

type Model = AlignmentModel<f64>;
type Data = Dataset<f64>;

fn open_out(config: &RunConfig) -> Result<OutDir, CliError> {
    let mut out = OutDir::create(config.output_dir())?;
    out.text("config.toml", &config.to_toml())?;
    Ok(out)
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    path.as_deref().ok_or_else(|| CliError::Usage(format!("no {key} given (set it in the config or via a flag)")))
}

fn load(path: &Path) -> Result<Data, CliError> {
    let name = path.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned());
    let data = load_ucr(path, &name).map_err(|e| match e {
        dtan_core::DtanError::Io(io) => CliError::Data(format!("{}: {io}", path.display())),
        other => CliError::Data(format!("{}: {other}", path.display())),
    })?;
    info!("loaded {} ({} signals, {} classes, length {})", path.display(), data.len(), data.n_classes(), data.max_len());
    Ok(data)
}

/// Re-expresses `test` labels with the class ids of `train`.
fn remap_labels(train: &Data, test: Data) -> Result<Data, CliError> {
    let ids = test
        .class_names
        .iter()
        .map(|name| {
            train
                .class_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| CliError::Data(format!("test class '{name}' does not occur in the training data")))
        })
        .collect::<Result<Vec<usize>, _>>()?;
    let labels = test.labels.iter().map(|&k| ids[k]).collect();
    Ok(Dataset::new(test.name, test.signals, labels, train.class_names.clone())?)
}

fn model_path(config: &RunConfig, out: &OutDir) -> PathBuf {
    config.data.model.clone().unwrap_or_else(|| out.path("model.dtan"))
}

fn load_model(config: &RunConfig, out: &OutDir) -> Result<Model, CliError> {
    let path = model_path(config, out);
    Model::load(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn mask_rows(signals: &[Signal<f64>]) -> impl Iterator<Item = Vec<String>> + '_ {
    signals.iter().enumerate().map(|(i, s)| {
        let mut row = vec![i.to_string()];
        row.extend((0..s.len()).map(|t| if s.is_valid(t) { "1" } else { "0" }.to_string()));
        row
    })
}

fn mask_header(len: usize) -> Vec<String> {
    std::iter::once("sample".to_string()).chain((0..len).map(|t| format!("t{t}"))).collect()
}

fn write_mask(out: &mut OutDir, name: &str, signals: &[Signal<f64>]) -> Result<(), CliError> {
    let header = mask_header(signals.first().map_or(0, Signal::len));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv(name, &header, mask_rows(signals))
}

fn write_dataset(out: &mut OutDir, name: &str, data: &Data) -> Result<(), CliError> {
    let path = out.path(name);
    write_ucr(&path, data).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Writes labeled signals in the loader's format.
fn write_signals(out: &mut OutDir, name: &str, rows: &[(String, &Signal<f64>)]) -> Result<(), CliError> {
    let path = out.path(name);
    let mut buf = Vec::new();
    write_rows(&mut buf, rows, '\t')?;
    let text = String::from_utf8(buf).expect("rows are utf-8");
    std::fs::write(&path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn synth(config: &RunConfig) -> Result<(), CliError> {
    let spec = config.synth.spec();
    let set = gen_synthetic::<f64>(&spec)?;
    let mut out = open_out(config)?;
    write_dataset(&mut out, "train.tsv", &set.train)?;
    write_dataset(&mut out, "test.tsv", &set.test)?;
    let warp_rows = [("train", &set.train_warps), ("test", &set.test_warps)].into_iter().flat_map(|(split, warps)| {
        warps.iter().enumerate().flat_map(move |(i, w)| {
            let last = (w.len() - 1) as f64;
            w.iter()
                .enumerate()
                .map(move |(t, &v)| vec![split.to_string(), i.to_string(), t.to_string(), fmt(t as f64 / last), fmt(v)])
        })
    });
    out.csv("latent_warps.csv", &["split", "sample", "t", "x", "warp"], warp_rows)?;
    if spec.min_len.is_some() {
        write_mask(&mut out, "train_mask.csv", &set.train.signals)?;
        write_mask(&mut out, "test_mask.csv", &set.test.signals)?;
    }
    let manifest = json!({
        "seed": spec.seed,
        "n_classes": spec.n_classes,
        "len": spec.len,
        "min_len": spec.min_len,
        "alpha": num(spec.alpha),
        "knots": spec.knots,
        "noise": num(spec.noise),
        "n_train": set.train.len(),
        "n_test": set.test.len(),
        "files": ["train.tsv", "test.tsv", "latent_warps.csv"],
    });
    out.json("manifest.json", &manifest)?;
    info!("wrote {} train and {} test signals to {}", set.train.len(), set.test.len(), out.root().display());
    Ok(())
}

fn build_model(config: &RunConfig, data: &Data) -> Result<Model, CliError> {
    let tess = Tessellation::new(config.tessellation.n_cells, config.tessellation.boundary()?)?;
    let head = if config.loss.beta > 0.0 { data.n_classes() } else { 0 };
    let arch = config.model.arch(head);
    Ok(Model::new(
        &tess,
        &arch,
        data.channels(),
        data.max_len(),
        config.model.recurrences,
        config.loss.config()?,
        config.model.seed,
    )?)
}

pub fn train(config: &RunConfig) -> Result<(), CliError> {
    let data = load(required(&config.data.train, "data.train")?)?;
    let train_config = config.train.config(config.loss.beta);
    train_config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut model = build_model(config, &data)?;
    let mut out = open_out(config)?;
    let labels = (!config.train.unlabeled).then_some(data.labels.as_slice());
    let start = Instant::now();
    let report = train_model(&mut model, &data.signals, labels, &train_config)?;
    info!("trained {} epochs in {:.1?}", train_config.epochs, start.elapsed());
    let path = model_path(config, &out);
    model.save(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;

    let has_val = !report.val_trace.is_empty();
    let header: &[&str] = if has_val { &["epoch", "train_loss", "val_loss"] } else { &["epoch", "train_loss"] };
    let rows = report.loss_trace.iter().enumerate().map(|(e, &l)| {
        let mut row = vec![e.to_string(), fmt(l)];
        if has_val {
            row.push(fmt(report.val_trace[e]));
        }
        row
    });
    out.csv("loss_trace.csv", header, rows)?;
    let summary = json!({
        "model": path.to_string_lossy(),
        "epochs": train_config.epochs,
        "n_params": model.net().n_params(),
        "basis_dim": model.basis().dim(),
        "best_epoch": report.best_epoch,
        "final_loss": num(*report.loss_trace.last().expect("at least one epoch")),
        "best_val_loss": if has_val { num(report.val_trace[report.best_epoch]) } else { Value::Null },
    });
    out.json("train_report.json", &summary)?;
    Ok(())
}

pub fn align(config: &RunConfig) -> Result<(), CliError> {
    let source = config.data.test.as_ref().or(config.data.train.as_ref());
    let data = load(required(&source.cloned(), "data.test or data.train")?)?;
    let mut out = open_out(config)?;
    let model = load_model(config, &out)?;
    let (aligned, thetas) = model.align_new(&data.signals)?;
    let rows: Vec<(String, &Signal<f64>)> =
        aligned.iter().zip(&data.labels).map(|(s, &k)| (data.class_names[k].clone(), s)).collect();
    write_signals(&mut out, "aligned.tsv", &rows)?;
    let d = model.basis().dim();
    let header: Vec<String> =
        ["sample", "stage"].into_iter().map(String::from).chain((0..d).map(|j| format!("theta{j}"))).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let theta_rows = thetas.iter().enumerate().flat_map(|(i, chain)| {
        chain.iter().enumerate().map(move |(r, theta)| {
            let mut row = vec![i.to_string(), r.to_string()];
            row.extend(theta.iter().map(|&v| fmt(v)));
            row
        })
    });
    out.csv("thetas.csv", &header, theta_rows)?;
    if data.is_variable_length() {
        write_mask(&mut out, "aligned_mask.csv", &aligned)?;
    }
    info!("aligned {} signals", aligned.len());
    Ok(())
}

/// Mean over members of the squared Euclidean distance to `center` on
/// jointly valid timesteps.
fn mean_sq_distance(members: &[Signal<f64>], center: &Signal<f64>) -> f64 {
    let len = center.len();
    let total: f64 = members
        .iter()
        .map(|s| {
            (0..len)
                .filter(|&t| s.is_valid(t) && center.is_valid(t))
                .map(|t| (0..s.channels()).map(|c| (s.values()[c * len + t] - center.values()[c * len + t]).powi(2)).sum::<f64>())
                .sum::<f64>()
        })
        .sum();
    total / members.len() as f64
}

pub fn barycenter(config: &RunConfig) -> Result<(), CliError> {
    let data = load(required(&config.data.train, "data.train")?)?;
    let b = &config.barycenter;
    let mut out = open_out(config)?;
    let aligned = if b.method == "dtan" { Some(load_model(config, &out)?.align_new(&data.signals)?.0) } else { None };
    let mut centroids: Vec<(String, Signal<f64>)> = Vec::new();
    let mut trace_rows = Vec::new();
    for (k, name) in data.class_names.iter().enumerate() {
        let idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == k).collect();
        if idx.is_empty() {
            warn!("class '{name}' has no samples; skipped");
            continue;
        }
        let members: Vec<Signal<f64>> = idx.iter().map(|&i| data.signals[i].clone()).collect();
        let (center, trace): (Signal<f64>, Vec<f64>) = match b.method.as_str() {
            "mean" | "dtan" => {
                let set = match &aligned {
                    Some(a) => idx.iter().map(|&i| a[i].clone()).collect(),
                    None => members.clone(),
                };
                let mean = class_means(&set, &vec![0; set.len()])?.classes.remove(0).expect("non-empty class").mean;
                let objective = mean_sq_distance(&set, &mean);
                (mean, vec![objective])
            }
            "dba" => {
                let r = dba(&members, &dba_init(&members)?, b.iters, None)?;
                (r.barycenter, r.cost_trace)
            }
            "softdtw" => {
                let r = soft_dtw_barycenter(&members, &dba_init(&members)?, b.gamma, b.iters, b.lr)?;
                (r.barycenter, r.objective_trace)
            }
            other => return Err(CliError::Usage(format!("unknown barycenter method '{other}' (mean, dba, softdtw, dtan)"))),
        };
        trace_rows.extend(trace.iter().enumerate().map(|(it, &v)| vec![name.clone(), it.to_string(), fmt(v)]));
        centroids.push((name.clone(), center));
    }
    let rows: Vec<(String, &Signal<f64>)> = centroids.iter().map(|(n, s)| (n.clone(), s)).collect();
    write_signals(&mut out, "centroids.tsv", &rows)?;
    out.csv("barycenter_trace.csv", &["class", "iteration", "objective"], trace_rows)?;
    Ok(())
}

fn ncc_method<'a>(name: &str, config: &RunConfig, model: &'a Model) -> Result<NccMethod<'a, f64>, CliError> {
    let e = &config.eval;
    Ok(match name {
        "euclidean" => NccMethod::Euclidean,
        "dtan" => NccMethod::Dtan(model),
        "dba" => NccMethod::Dba { iters: e.dba_iters, band: None },
        "softdtw" => NccMethod::SoftDtw { gamma: e.softdtw_gamma, iters: e.softdtw_iters, lr: e.softdtw_lr },
        other => return Err(CliError::Usage(format!("unknown NCC method '{other}' (euclidean, dtan, dba, softdtw)"))),
    })
}

fn explained_first(values: &[f64]) -> f64 {
    values.first().copied().unwrap_or(f64::NAN)
}

pub fn eval(config: &RunConfig) -> Result<(), CliError> {
    let train = load(required(&config.data.train, "data.train")?)?;
    let test = load(required(&config.data.test, "data.test")?)?;
    let test = remap_labels(&train, test)?;
    let mut out = open_out(config)?;
    let model = load_model(config, &out)?;
    let mut metrics = Map::new();
    metrics.insert("n_train".into(), json!(train.len()));
    metrics.insert("n_test".into(), json!(test.len()));

    let mut ncc = Map::new();
    for name in &config.eval.ncc_methods {
        let method = ncc_method(name, config, &model)?;
        let report = ncc_evaluate(&method, &train, &test)?;
        info!("NCC {name}: accuracy {:.4}", report.accuracy);
        let header: Vec<String> = std::iter::once("true_class".to_string())
            .chain(train.class_names.iter().map(|c| format!("pred_{c}")))
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = report.confusion.iter().enumerate().map(|(k, row)| {
            std::iter::once(train.class_names[k].clone()).chain(row.iter().map(usize::to_string)).collect()
        });
        out.csv(&format!("ncc_confusion_{name}.csv"), &header, rows)?;
        ncc.insert(name.clone(), json!({ "accuracy": num(report.accuracy) }));
    }
    metrics.insert("ncc".into(), Value::Object(ncc));

    let (train_aligned, train_thetas) = model.align_new(&train.signals)?;
    if config.eval.variance_reduction {
        let (test_aligned, _) = model.align_new(&test.signals)?;
        let mut vr = Map::new();
        for (split, raw, aligned, labels) in
            [("train", &train.signals, &train_aligned, &train.labels), ("test", &test.signals, &test_aligned, &test.labels)]
        {
            let r = variance_reduction(raw, aligned, labels)?;
            if r.is_negative() {
                warn!("alignment increased the {split} within-class variance");
            }
            vr.insert(
                split.into(),
                json!({ "value": num(r.value), "wcss_raw": num(r.wcss_raw), "wcss_aligned": num(r.wcss_aligned) }),
            );
        }
        metrics.insert("variance_reduction".into(), Value::Object(vr));
    }

    if config.eval.pca {
        let mut curve_rows = Vec::new();
        let mut loading_rows = Vec::new();
        let mut per_class = Map::new();
        for (k, name) in train.class_names.iter().enumerate() {
            let idx: Vec<usize> = (0..train.len()).filter(|&i| train.labels[i] == k).collect();
            if idx.len() < 2 {
                warn!("class '{name}' has fewer than two samples; no PCA");
                continue;
            }
            let raw: Vec<Signal<f64>> = idx.iter().map(|&i| train.signals[i].clone()).collect();
            let aligned: Vec<Signal<f64>> = idx.iter().map(|&i| train_aligned[i].clone()).collect();
            let thetas: Vec<Vec<Vec<f64>>> = idx.iter().map(|&i| train_thetas[i].clone()).collect();
            let kmax = config.eval.pca_k.clamp(1, idx.len().min(raw[0].values().len()));
            let before = pca_aligned(&raw, None, kmax)?;
            let after = pca_aligned(&aligned, Some((model.basis(), &thetas)), kmax)?;
            let (cb, ca) = (before.cumulative_explained(), after.cumulative_explained());
            for j in 0..before.explained.len() {
                curve_rows.push(vec![
                    name.clone(),
                    j.to_string(),
                    fmt(before.explained[j]),
                    fmt(after.explained[j]),
                    fmt(cb[j]),
                    fmt(ca[j]),
                ]);
            }
            for (j, comp) in after.components.iter().take(kmax).enumerate() {
                loading_rows.extend(comp.iter().enumerate().map(|(t, &v)| vec![name.clone(), j.to_string(), t.to_string(), fmt(v)]));
            }
            per_class.insert(
                name.clone(),
                json!({
                    "first_pc_raw": num(explained_first(&before.explained)),
                    "first_pc_aligned": num(explained_first(&after.explained)),
                }),
            );
        }
        out.csv(
            "pca_explained.csv",
            &["class", "component", "explained_raw", "explained_aligned", "cumulative_raw", "cumulative_aligned"],
            curve_rows,
        )?;
        out.csv("pca_loadings.csv", &["class", "component", "index", "loading"], loading_rows)?;
        metrics.insert("pca".into(), Value::Object(per_class));
    }
    out.json("metrics.json", &Value::Object(metrics))?;
    Ok(())
}

pub fn time(config: &RunConfig, threads: Option<usize>) -> Result<(), CliError> {
    let train = load(required(&config.data.train, "data.train")?)?;
    let pool = match &config.data.test {
        Some(p) => load(p)?,
        None => train.clone(),
    };
    let t = &config.timing;
    if t.repeats == 0 || t.batch == 0 {
        return Err(CliError::Usage("timing.repeats and timing.batch must be positive".into()));
    }
    let threads = threads.unwrap_or(t.threads).max(1);
    let batch: Vec<Signal<f64>> = pool.signals.iter().take(t.batch).cloned().collect();
    let mut out = open_out(config)?;
    let needs_model = t.methods.iter().any(|m| m == "dtan");
    let model = if needs_model { Some(load_model(config, &out)?) } else { None };
    let mut timings = Vec::new();
    for name in &t.methods {
        let method = match name.as_str() {
            "mean" => TimedMethod::Mean,
            "dtan" => TimedMethod::Dtan {
                model: model.as_ref().expect("model loaded"),
                train: t.include_training.then(|| config.train.config(0.0)),
            },
            "dba" => TimedMethod::Dba { iters: config.barycenter.iters },
            "softdtw" => {
                TimedMethod::SoftDtw { gamma: config.barycenter.gamma, iters: config.barycenter.iters, lr: config.barycenter.lr }
            }
            other => return Err(CliError::Usage(format!("unknown timing method '{other}' (mean, dtan, dba, softdtw)"))),
        };
        timings.extend(timing_harness(&method, &train.signals, &batch, t.repeats, threads)?);
    }
    let rows = timings.iter().flat_map(|tm| {
        tm.times.iter().enumerate().map(move |(r, &s)| {
            vec![tm.method.clone(), tm.phase.clone(), tm.threads.to_string(), r.to_string(), fmt(s)]
        })
    });
    out.csv("timing.csv", &["method", "phase", "threads", "repeat", "seconds"], rows)?;
    let summary = timings.iter().map(|tm| {
        vec![tm.method.clone(), tm.phase.clone(), tm.threads.to_string(), tm.times.len().to_string(), fmt(tm.mean), fmt(tm.median)]
    });
    out.csv("timing_summary.csv", &["method", "phase", "threads", "repeats", "mean_seconds", "median_seconds"], summary)?;
    Ok(())
}
