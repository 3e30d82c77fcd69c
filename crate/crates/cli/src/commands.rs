use std::fs;
use std::path::{Path, PathBuf};

use panvae::config::{RunConfig, ECHO_FILE};
use panvae::data::{load_dataset, Dataset, Split};
use panvae::losses::Variant;
use panvae::metrics::{
    coverage_ratio, load_projection_csv, pca_2d, write_projection_csv, HullPolygon,
    ProjectionMethod,
};
use panvae::model::Model;
use panvae::pruning::{prune, responsibility_counts, write_prune_report};
use panvae::train::{
    evaluate, load_checkpoint, save_checkpoint, train, write_run_outputs, Checkpoint,
};

use crate::export::Raster;
use crate::failure::{fail, CliResult, WithCode, CHECKPOINT, CONFIG, DATA};

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub div_scale: Option<f64>,
    pub data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub limit: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

/// The file config with command-line overrides applied.
pub fn resolve_config(args: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = args.variant {
        cfg.train.variant = v;
    }
    if let Some(s) = args.div_scale {
        cfg.loss.diversity = s;
    }
    if let Some(p) = &args.data {
        cfg.data.train = Some(p.clone());
    }
    if let Some(p) = &args.test_data {
        cfg.data.test = Some(p.clone());
    }
    if let Some(n) = args.limit {
        cfg.data.train_limit = Some(n);
    }
    if let Some(n) = args.epochs {
        cfg.train.epochs = n;
    }
    if let Some(s) = args.seed {
        cfg.set_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |v| v.to_string())
}

pub fn cmd_train(args: &TrainArgs) -> CliResult {
    let cfg = resolve_config(args)?;
    if cfg.data.train.is_none() {
        return fail(
            DATA,
            "missing --data: no training data given on the command line or in the config file",
        );
    }
    let (data, test) = cfg.load_data()?;
    let model_cfg = cfg.model_config(data.num_classes, data.shape)?;
    let mut model = Model::new(model_cfg)?;
    let train_cfg = cfg.train_config(None);
    log::info!(
        "training {} on {} images ({} classes), {} epochs",
        train_cfg.variant,
        data.len(),
        data.num_classes,
        train_cfg.epochs
    );
    let record = train(&mut model, &train_cfg, &data, test.as_ref())?;
    write_run_outputs(&args.out, &model, &train_cfg, &record)?;
    cfg.save(&args.out.join(ECHO_FILE))?;
    for e in &record.epochs {
        println!(
            "epoch={} total={} pred={} recon={} kl={} diversity={} train_accuracy={} test_accuracy={} db={}",
            e.epoch,
            e.loss.total,
            e.loss.pred,
            e.loss.recon,
            e.loss.kl,
            e.loss.diversity,
            e.train_accuracy,
            opt(e.test_accuracy),
            opt(e.db)
        );
    }
    println!("checkpoint={}", args.out.join("model.ckpt").display());
    Ok(())
}

fn open_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    load_checkpoint(path).code(CHECKPOINT)
}

fn open_data(path: &Path, split: Split, model: &Model) -> CliResult<Dataset> {
    let data = load_dataset(path, split)?;
    if data.shape != model.config.input_shape {
        return fail(
            DATA,
            format!(
                "{}: images are {:?}, the checkpoint expects {:?}",
                path.display(),
                data.shape,
                model.config.input_shape
            ),
        );
    }
    if data.num_classes > model.config.num_classes {
        return fail(
            DATA,
            format!(
                "{}: labels span {} classes, the checkpoint has {}",
                path.display(),
                data.num_classes,
                model.config.num_classes
            ),
        );
    }
    Ok(data)
}

pub fn cmd_eval(ckpt: &Path, data: &Path, split: Split, report: &Path) -> CliResult {
    let c = open_checkpoint(ckpt)?;
    let data = open_data(data, split, &c.model)?;
    let (accuracy, metrics) = evaluate(&c.model, &data)?;
    metrics.write(report)?;
    println!(
        "accuracy={} db={} active_prototypes={} report={}",
        accuracy,
        opt(metrics.db),
        metrics.active_prototypes,
        report.display()
    );
    if let Some(h) = metrics.entropy {
        println!("entropy={h}");
    }
    if let Some(g) = &metrics.accuracy_gap {
        println!(
            "accuracy_gap={} group_a={} group_b={}",
            g.gap, g.group_a, g.group_b
        );
    }
    Ok(())
}

/// True when both paths name the same file, whether or not `b` exists yet.
fn same_file(a: &Path, b: &Path) -> bool {
    let canon = |p: &Path| {
        p.canonicalize().ok().or_else(|| {
            let parent = p
                .parent()
                .filter(|q| !q.as_os_str().is_empty())
                .unwrap_or(Path::new("."));
            Some(parent.canonicalize().ok()?.join(p.file_name()?))
        })
    };
    match (canon(a), canon(b)) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

pub fn cmd_prune(ckpt: &Path, data: &Path, out: &Path, report: Option<&Path>) -> CliResult {
    if same_file(ckpt, out) {
        return fail(
            CONFIG,
            format!(
                "--out {} would overwrite --ckpt; choose another path",
                out.display()
            ),
        );
    }
    let report = report.map_or_else(|| out.with_extension("csv"), Path::to_path_buf);
    if same_file(ckpt, &report) {
        return fail(CONFIG, "the prune report would overwrite --ckpt");
    }
    let mut c = open_checkpoint(ckpt)?;
    let data = open_data(data, Split::Train, &c.model)?;
    let embeddings = c.model.embed(&data.images)?;
    let counts = responsibility_counts(
        &embeddings,
        &data.labels,
        &c.model.bank,
        c.model.config.epsilon,
    )?;
    let (bank, rows) = prune(&counts, &c.model.bank);
    let pruned = rows.iter().filter(|r| r.pruned).count();
    c.model.bank = bank;
    if pruned > 0 {
        c.notes.push(format!(
            "pruned {pruned} prototypes with zero responsibility"
        ));
    }
    save_checkpoint(out, &c)?;
    write_prune_report(&report, &rows)?;
    println!(
        "pruned={} active_prototypes={} checkpoint={} report={}",
        pruned,
        c.model.bank.active_count(),
        out.display(),
        report.display()
    );
    Ok(())
}

pub struct ReportArgs {
    pub ckpt: PathBuf,
    pub data: PathBuf,
    pub split: Split,
    pub class: usize,
    pub n_nearest: usize,
    pub proj: ProjectionMethod,
    pub proj_file: Option<PathBuf>,
    pub out: PathBuf,
}

fn write_hull(path: &Path, hull: &HullPolygon) -> CliResult {
    write_projection_csv(path, &hull.vertices)?;
    Ok(())
}

pub fn cmd_report(args: &ReportArgs) -> CliResult {
    if args.proj == ProjectionMethod::External && args.proj_file.is_none() {
        return fail(CONFIG, "--proj external needs --proj-file");
    }
    if args.n_nearest == 0 {
        return fail(CONFIG, "--n-nearest must be positive");
    }
    let c = open_checkpoint(&args.ckpt)?;
    if args.class >= c.model.config.num_classes {
        return fail(
            CONFIG,
            format!(
                "--class {} out of range for {} classes",
                args.class, c.model.config.num_classes
            ),
        );
    }
    let data = open_data(&args.data, args.split, &c.model)?;
    let members: Vec<usize> = (0..data.len())
        .filter(|&i| data.labels[i] == args.class)
        .collect();
    if members.is_empty() {
        return fail(
            DATA,
            format!(
                "class {} has no images in {}",
                args.class,
                args.data.display()
            ),
        );
    }
    let class_data = data.subset(&members);
    let embeddings = c.model.embed(&class_data.images)?;
    let projected = match args.proj {
        ProjectionMethod::Pca => pca_2d(&embeddings)?,
        ProjectionMethod::External => {
            let path = args.proj_file.as_deref().expect("checked above");
            let all = load_projection_csv(path)?;
            if all.len() == data.len() {
                members.iter().map(|&i| all[i]).collect()
            } else if all.len() == members.len() {
                all
            } else {
                return fail(
                    DATA,
                    format!(
                        "{} has {} rows; expected {} (whole dataset) or {} (class {})",
                        path.display(),
                        all.len(),
                        data.len(),
                        members.len(),
                        args.class
                    ),
                );
            }
        }
    };
    let cov = coverage_ratio(
        &embeddings,
        &projected,
        &c.model.bank,
        args.class,
        c.model.config.epsilon,
        args.n_nearest,
    )?;
    fs::create_dir_all(&args.out).code(DATA)?;
    write_hull(&args.out.join("class_hull.csv"), &cov.class_hull)?;
    write_hull(&args.out.join("sample_hull.csv"), &cov.sample_hull)?;
    let mut text = String::from("index,x,y,sampled\n");
    let mut sampled = vec![false; members.len()];
    cov.sample.iter().for_each(|&i| sampled[i] = true);
    for (pos, (&i, p)) in members.iter().zip(&projected).enumerate() {
        text.push_str(&format!("{},{},{},{}\n", i, p[0], p[1], sampled[pos]));
    }
    let proj_path = args.out.join("projection.csv");
    fs::write(&proj_path, text).code(DATA)?;
    let summary = format!(
        "class,ratio,class_hull_area,sample_hull_area,observations,sampled\n{},{},{},{},{},{}\n",
        args.class,
        cov.ratio,
        cov.class_hull.area,
        cov.sample_hull.area,
        members.len(),
        cov.sample.len()
    );
    fs::write(args.out.join("coverage.csv"), summary).code(DATA)?;
    println!(
        "class={} coverage_ratio={} observations={} sampled={} out={}",
        args.class,
        cov.ratio,
        members.len(),
        cov.sample.len(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_export(ckpt: &Path, out: &Path, include_pruned: bool) -> CliResult {
    let c = open_checkpoint(ckpt)?;
    let model = &c.model;
    let shape = model.config.input_shape;
    let decoded = model.decode_prototypes();
    fs::create_dir_all(out).code(DATA)?;
    let (mut active, mut marked) = (0, 0);
    for k in 0..model.bank.num_classes {
        let mut tiles = Vec::new();
        for j in 0..model.bank.per_class {
            let is_active = model.bank.is_active(k, j);
            if !is_active && !include_pruned {
                continue;
            }
            let mut r = Raster::from_chw(&decoded[model.bank.index(k, j)], shape);
            if is_active {
                active += 1;
            } else {
                r.mark_with_cross();
                marked += 1;
            }
            r.write_png(&out.join(format!("class_{k}_proto_{j}.png")))
                .code(DATA)?;
            tiles.push(r);
        }
        Raster::montage(&tiles)
            .write_png(&out.join(format!("class_{k}_montage.png")))
            .code(DATA)?;
    }
    println!(
        "active_images={active} marked_images={marked} out={}",
        out.display()
    );
    Ok(())
}
