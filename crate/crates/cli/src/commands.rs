use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use acpseg::data::{generate_scene, read_cloud_file, write_cloud_file, RunConfig, CLASS_NAMES};
use acpseg::geometry::{knn_positions, poisson_disk_subsample_positions};
use acpseg::network::Architecture;
use acpseg::pipeline::ablation::{block_variants, fusion_variants, run_variants, AblationRow, AblationSetup};
use acpseg::pipeline::gradsuite::{run_gradient_suite, CheckKind};
use acpseg::pipeline::{evaluate_with_voting, load_model, Metrics, Trainer};
use acpseg::PointCloud64;

use crate::{run_config, AblateArgs, BenchArgs, CliError, EvalArgs, GenArgs, GlobalArgs, Grid, TrainArgs};

const CHECKPOINT_FILE: &str = "model.ckpt";
const LOG_FILE: &str = "loss.csv";
const CONFIG_FILE: &str = "config.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn read_clouds(paths: &[PathBuf]) -> Result<Vec<PointCloud64>, CliError> {
    paths.iter().map(|p| Ok(read_cloud_file(p)?)).collect()
}

pub fn gen(global: &GlobalArgs, args: &GenArgs) -> Result<(), CliError> {
    let cfg = run_config(global)?;
    let spec = args.preset.map_or(cfg.dataset.scene, |p| p.spec());
    create_dir(&args.out)?;
    for i in 0..args.count {
        let cloud: PointCloud64 = generate_scene(&spec, cfg.dataset.seed.wrapping_add(i as u64))?;
        let path = args.out.join(format!("scene_{i:03}.txt"));
        write_cloud_file(&cloud, &path)?;
        println!("{} {} points", path.display(), cloud.len());
    }
    Ok(())
}

pub fn train(global: &GlobalArgs, args: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = run_config(global)?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(c) = args.crops_per_epoch {
        cfg.train.crops_per_epoch = c;
    }
    if let Some(lr) = args.lr {
        cfg.train.lr = lr;
    }
    cfg.validate()?;
    let scenes = if args.data.is_empty() {
        cfg.dataset.split::<f64>()?.0
    } else {
        read_clouds(&args.data)?
    };
    create_dir(&args.out)?;
    let log_path = args.out.join(LOG_FILE);
    let mut log = fs::File::create(&log_path).map_err(io_err(&log_path))?;
    writeln!(log, "epoch,step,loss,oa,lr").map_err(io_err(&log_path))?;
    let mut trainer = Trainer::<f64>::new(&cfg.network, &cfg.fusion, &cfg.train)?;
    let mut write_err = None;
    trainer.run(&scenes, |rec| {
        println!("{rec}");
        if write_err.is_none() {
            write_err = writeln!(log, "{rec}").err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_err(&log_path)(e));
    }
    trainer.save_checkpoint(args.out.join(CHECKPOINT_FILE))?;
    let cfg_path = args.out.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_json()?).map_err(io_err(&cfg_path))?;
    eprintln!(
        "trained {} steps, {} parameters, checkpoint in {}",
        trainer.steps_taken(),
        trainer.store.num_trainable(),
        args.out.display()
    );
    Ok(())
}

/// `--config` wins; otherwise the `config.json` written beside the checkpoint.
fn eval_config(global: &GlobalArgs, checkpoint: &Path) -> Result<RunConfig, CliError> {
    let beside = checkpoint.parent().map(|d| d.join(CONFIG_FILE));
    match beside {
        Some(p) if global.config.is_none() && p.exists() => {
            let g = GlobalArgs {
                config: Some(p),
                ..global.clone()
            };
            run_config(&g)
        }
        _ => run_config(global),
    }
}

/// Per-class IoU rows followed by mIoU and OA, all as fractions.
pub fn metrics_table(m: &Metrics) -> String {
    let mut out = String::from("class      IoU\n");
    for (k, iou) in m.per_class_iou.iter().enumerate() {
        let name = CLASS_NAMES.get(k).map_or_else(|| format!("class{k}"), |s| s.to_string());
        let value = iou.map_or_else(|| "n/a".to_string(), |v| v.to_string());
        out.push_str(&format!("{name:<10} {value}\n"));
    }
    out.push_str(&format!("{:<10} {}\n{:<10} {}\n", "mIoU", m.miou, "OA", m.oa));
    out
}

pub fn eval(global: &GlobalArgs, args: &EvalArgs) -> Result<(), CliError> {
    let cfg = eval_config(global, &args.checkpoint)?;
    cfg.validate()?;
    let scenes = if args.data.is_empty() {
        cfg.dataset.split::<f64>()?.1
    } else {
        read_clouds(&args.data)?
    };
    if scenes.is_empty() {
        return Err(CliError::Usage("no evaluation scenes".into()));
    }
    let (store, model) = load_model::<f64>(&cfg.network, &cfg.fusion, &args.checkpoint)?;
    let (metrics, _, results) = evaluate_with_voting(&store, &model, &scenes, &cfg.eval)?;
    print!("{}", metrics_table(&metrics));
    if let Some(dir) = &args.predictions {
        create_dir(dir)?;
        for (i, (scene, res)) in scenes.iter().zip(&results).enumerate() {
            let mut pred = scene.clone();
            pred.labels = Some(res.predictions.clone());
            write_cloud_file(&pred, dir.join(format!("pred_{i:03}.txt")))?;
        }
    }
    Ok(())
}

pub fn gradcheck() -> Result<(), CliError> {
    let start = Instant::now();
    let entries = run_gradient_suite()?;
    let mut failed = 0;
    for e in &entries {
        let kind = match e.kind {
            CheckKind::Primitive => "primitive",
            CheckKind::Composite => "composite",
        };
        let status = if e.passed() { "PASS" } else { "FAIL" };
        failed += usize::from(!e.passed());
        println!(
            "{status} {kind:<9} {:<28} max_rel_err={:.3e} tol={:.0e} checked={} ({} ms)",
            e.name,
            e.report.max_rel_error,
            e.report.tol,
            e.report.checked,
            e.elapsed.as_millis()
        );
    }
    println!(
        "{} checks, {failed} failed, {:.1} s",
        entries.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

pub fn bench(global: &GlobalArgs, args: &BenchArgs) -> Result<(), CliError> {
    let cfg = run_config(global)?;
    if args.repeats == 0 || args.neighbors == 0 {
        return Err(CliError::Usage("--repeats and --neighbors must be positive".into()));
    }
    let cloud: PointCloud64 = generate_scene(&args.preset.spec(), cfg.dataset.seed)?;
    let pts = &cloud.positions;
    println!("points {}", pts.len());
    let mut best_knn = f64::INFINITY;
    let mut best_pds = f64::INFINITY;
    let mut kept = 0;
    for _ in 0..args.repeats {
        let t = Instant::now();
        knn_positions(pts, pts, args.neighbors).map_err(acpseg::Error::from)?;
        best_knn = best_knn.min(t.elapsed().as_secs_f64());
        let t = Instant::now();
        kept = poisson_disk_subsample_positions(pts, args.radius, cfg.dataset.seed)
            .map_err(acpseg::Error::from)?
            .len();
        best_pds = best_pds.min(t.elapsed().as_secs_f64());
    }
    let n = pts.len() as f64;
    println!(
        "knn  m={:<3} {:.4} s  {:.0} queries/s",
        args.neighbors,
        best_knn,
        n / best_knn
    );
    println!(
        "pds  r={:<5} {:.4} s  {:.0} points/s  kept {kept}",
        args.radius,
        best_pds,
        n / best_pds
    );
    Ok(())
}

fn print_rows(rows: &[AblationRow]) {
    println!("{:<18} {:>9} {:>9} {:>9}  per-seed mIoU", "variant", "params", "mIoU", "OA");
    for r in rows {
        let seeds: Vec<String> = r.miou.iter().map(|v| format!("{:.2}", 100.0 * v)).collect();
        println!(
            "{:<18} {:>9} {:>9.2} {:>9.2}  {}",
            r.name,
            r.params,
            100.0 * r.mean_miou(),
            100.0 * r.mean_oa(),
            seeds.join(" ")
        );
    }
}

pub fn ablate(global: &GlobalArgs, args: &AblateArgs) -> Result<(), CliError> {
    let cfg = run_config(global)?;
    cfg.validate()?;
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be positive".into()));
    }
    let setup = AblationSetup {
        seeds: (0..args.seeds as u64).map(|s| cfg.train.seed.wrapping_add(s)).collect(),
        dataset: cfg.dataset,
        network: cfg.network,
        fusion: cfg.fusion,
        train: cfg.train,
        eval: cfg.eval,
    };
    let mut rows = Vec::new();
    if matches!(args.grid, Grid::Blocks | Grid::All) {
        let variants = block_variants(&setup, &[Architecture::Hrnet, Architecture::Unet]);
        rows.extend(run_variants(&setup, &variants)?);
    }
    if matches!(args.grid, Grid::Fusion | Grid::All) {
        rows.extend(run_variants(&setup, &fusion_variants(&setup))?);
    }
    print_rows(&rows);
    if let Some(path) = &args.json {
        let text = serde_json::to_string_pretty(&rows).map_err(acpseg::Error::from)?;
        fs::write(path, text).map_err(io_err(path))?;
    }
    Ok(())
}
