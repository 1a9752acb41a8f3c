use std::fs;
use std::path::{Path, PathBuf};

use orthoseg::checkpoint::Checkpoint;
use orthoseg::data::{
    colorize, load_label_map, load_scene_file, load_scenes, prepare_tiles, read_prepared,
    synth_dataset, write_pnm, write_prepared,
};
use orthoseg::eval::{evaluate, write_report};
use orthoseg::trainer::Event;
use orthoseg::{infer_full_raster, Dataset, Error, Model, Result, RunConfig, Trainer};

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::parse(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn prepare(
    input: &Path,
    out: &Path,
    config: Option<&Path>,
    tile: Option<usize>,
    overlap: Option<f64>,
    val_frac: Option<f64>,
    seed: u64,
) -> Result<()> {
    let mut data = match config {
        Some(p) => read_config(p)?.data,
        None => RunConfig::default().data,
    };
    if let Some(t) = tile {
        data.tile_size = t;
    }
    if let Some(o) = overlap {
        data.overlap = o;
    }
    if let Some(v) = val_frac {
        data.val_fraction = v;
    }
    let scenes = load_scenes(input)?;
    let prepared = prepare_tiles(&scenes, &data, seed)?;
    write_prepared(&prepared, out)?;
    let m = &prepared.manifest;
    println!(
        "{} scenes, {} tiles: {} train, {} val, {} dropped; {} tile files in {}",
        scenes.len(),
        m.tiles.len(),
        m.train.len(),
        m.val.len(),
        m.dropped.len(),
        m.train_files.len() + m.val_files.len(),
        out.display()
    );
    Ok(())
}

pub fn train(
    config: &Path,
    out: &Path,
    resume: Option<&Path>,
    tiles: Option<&Path>,
    allow_mismatch: bool,
) -> Result<()> {
    let cfg = read_config(config)?;
    let tiles_dir = match tiles {
        Some(t) => t.to_path_buf(),
        None if !cfg.data.tiles_dir.is_empty() => config
            .parent()
            .unwrap_or(Path::new("."))
            .join(&cfg.data.tiles_dir),
        None => {
            return Err(Error::Usage(
                "no tile directory: pass --tiles or set data.tiles_dir".into(),
            ))
        }
    };
    let prepared = read_prepared(&tiles_dir)?;
    let data = Dataset::from_prepared(&prepared, &cfg)?;
    let mut trainer = match resume {
        Some(path) => {
            let mut ck = Checkpoint::load(path, Some(&cfg), allow_mismatch)?;
            ck.config_text = cfg.to_text();
            Trainer::from_checkpoint(ck)?
        }
        None => Trainer::new(cfg.clone())?,
    };
    println!(
        "training on {} tiles ({} validation), iteration {} of {}",
        data.train.len(),
        data.val.len(),
        trainer.iteration(),
        cfg.trainer.max_iterations
    );
    trainer.run(
        &data,
        cfg.trainer.max_iterations,
        Some(out),
        &mut |e| match e {
            Event::Evaluated(r) => println!(
                "iter {:>8}  train {:.5}  val {:.5}  lr {:.1e}  momentum {}  {}",
                r.iteration,
                r.train_loss,
                r.val_loss,
                r.lr,
                r.momentum,
                r.phase.name()
            ),
            Event::Plateau(t) => println!(
                "plateau {}: lr {:.1e}{}{}",
                t.plateau,
                t.lr,
                if t.entered_fine_tuning {
                    ", fine-tuning"
                } else {
                    ""
                },
                t.unfrozen
                    .map(|b| format!(", unfroze {b}"))
                    .unwrap_or_default()
            ),
        },
    )?;
    if let Ok(acc) = trainer.pixel_accuracy(&data.val) {
        println!("validation pixel accuracy {:.2}%", 100.0 * acc);
    }
    Ok(())
}

pub fn infer(ckpt: &Path, image: &Path, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(ckpt, None, false)?;
    let cfg = ck.config()?;
    let model = Model::from_checkpoint(&ck)?;
    let scene = load_scene_file(image)?;
    let stitched = infer_full_raster(&model, &scene, &cfg.data)?;
    stitched
        .probability_raster()?
        .save_mcr(&with_suffix(out, ".probs.mcr"))?;
    stitched
        .label_raster()?
        .save_mcr(&with_suffix(out, ".labels.mcr"))?;
    let [r, g, b] = colorize(&stitched.labels);
    write_pnm(
        &with_suffix(out, ".color.ppm"),
        stitched.width,
        stitched.height,
        &[&r, &g, &b],
    )?;
    println!(
        "{}x{} scene predicted; wrote {}.{{probs.mcr,labels.mcr,color.ppm}}",
        stitched.height,
        stitched.width,
        out.display()
    );
    Ok(())
}

pub fn eval(pred: &Path, truth: &Path, out: &Path, classes: usize) -> Result<()> {
    let (ph, pw, p) = load_label_map(pred)?;
    let (th, tw, t) = load_label_map(truth)?;
    if (ph, pw) != (th, tw) {
        return Err(Error::Usage(format!(
            "prediction is {ph}x{pw}, truth is {th}x{tw}"
        )));
    }
    let metrics = evaluate(&p, &t, classes)?;
    write_report(out, &metrics, &p, &t, ph, pw)?;
    print!("{}", metrics.to_text());
    Ok(())
}

pub fn synth(out: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    if count == 0 || size == 0 {
        return Err(Error::Usage("count and size must be positive".into()));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (i, scene) in synth_dataset(count, size, seed).iter().enumerate() {
        scene.save_mcr(&out.join(format!("scene{i:03}.mcr")))?;
    }
    println!("wrote {count} scenes of {size}x{size} to {}", out.display());
    Ok(())
}
