use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fairtab::cvae::CounterfactualGenerator;
use fairtab::eval::{delta_dp, hard_predictions, Evaluation, ProbeConfig, ProbeKind};
use fairtab::faircl::{fit_encoder_stack, EncoderSnapshot};
use fairtab::neural::checkpoint;
use fairtab::tabular::{load_csv, synth_generate, write_csv, Dataset, FeatureEncoder, FitOptions, Task};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::{invalid, manifest, report, svg};
use crate::{CounterfactualArgs, EmbedArgs, EvaluateArgs, FitEncoderArgs, FitGeneratorArgs, ReportArgs, RunArgs, SynthArgs};

pub const MIN_SYNTH_ROWS: usize = 10;
pub const SNAPSHOT_PREFIX: &str = "snapshot_epoch_";

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn write(p: &Path, text: &str) -> Result<()> {
    std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))
}

fn text_hash(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

fn load_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.set_seed(s);
    }
    if let Some(o) = &a.out_dir {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn load_generator(path: &Path) -> Result<CounterfactualGenerator> {
    if !path.is_file() {
        return Err(invalid(format!("no generator checkpoint at {}", path.display())));
    }
    checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn csv_lines<T>(header: &str, rows: &[T], line: impl Fn(&T) -> String) -> String {
    let mut s = format!("{header}\n");
    for r in rows {
        s.push_str(&line(r));
        s.push('\n');
    }
    s
}

/// ΔDP of a logistic probe fitted and scored on the encoded inputs.
pub fn raw_probe_delta_dp(ds: &Dataset) -> Result<f64> {
    let ed = FeatureEncoder::fit(ds, FitOptions::encoder_path())?.encode(ds)?;
    let y = ed.targets.as_deref().ok_or_else(|| invalid("dataset has no target"))?;
    let probe = ProbeConfig::default().fit(ProbeKind::Logistic, &ed.matrix, y)?;
    Ok(delta_dp(&hard_predictions(&probe.predict(&ed.matrix)?), &ed.sensitive)?)
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    if a.n < MIN_SYNTH_ROWS {
        return Err(invalid(format!("n < {MIN_SYNTH_ROWS}")));
    }
    if !a.bias.is_finite() {
        return Err(invalid("bias must be finite"));
    }
    let ds = synth_generate(a.n, a.bias, a.seed)?;
    create_dir(&a.out)?;
    let data = a.out.join("data.csv");
    let schema = a.out.join("schema.toml");
    write_csv(&data, &ds)?;
    ds.schema.save(&schema)?;
    let hash = text_hash(&format!("synth n={} bias={} seed={}", a.n, a.bias, a.seed));
    manifest::update(&a.out, &[], &[&data, &schema], "synth", a.seed, &hash)?;
    println!("wrote {} rows to {}", a.n, data.display());
    println!("raw-feature probe delta_dp: {:.4}", raw_probe_delta_dp(&ds)?);
    Ok(())
}

pub fn fit_generator(a: &FitGeneratorArgs) -> Result<()> {
    let mut cfg = load_config(&a.run)?;
    if let Some(e) = a.epochs {
        cfg.generator.epochs = e;
    }
    cfg.validate()?;
    let (train, _) = cfg.load_data()?;
    create_dir(&cfg.out_dir)?;
    let (gen, history) = CounterfactualGenerator::fit(&train, &cfg.generator)?;
    let ckpt = cfg.generator_path();
    let losses = cfg.out_dir.join("generator_loss.csv");
    checkpoint::save(&ckpt, &gen)?;
    write(
        &losses,
        &csv_lines("epoch,recon,kl,adv,cyc,total,disc_accuracy", &history, |e| {
            format!("{},{},{},{},{},{},{}", e.epoch, e.recon, e.kl, e.adv, e.cyc, e.total, e.disc_accuracy)
        }),
    )?;
    manifest::update(&cfg.out_dir, &[], &[&ckpt, &losses], "fit-generator", cfg.seed, &cfg.hash())?;
    if let Some(last) = history.last() {
        println!(
            "generator: {} epochs, final recon {:.4}, cyc {:.4}, discriminator accuracy {:.3}",
            history.len(),
            last.recon,
            last.cyc,
            last.disc_accuracy
        );
    }
    Ok(())
}

pub fn counterfactuals(a: &CounterfactualArgs) -> Result<()> {
    let gen = load_generator(&a.generator)?;
    let ds = load_csv(&a.data, &gen.features.schema)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let cf = gen.counterfactual_dataset(&ds, &mut rng)?;
    write_csv(&a.out, &cf)?;
    println!("wrote {} counterfactual rows to {}", cf.n(), a.out.display());
    Ok(())
}

pub fn fit_encoder(a: &FitEncoderArgs) -> Result<()> {
    let mut cfg = load_config(&a.run)?;
    let enc = &mut cfg.encoder;
    if let Some(e) = a.epochs {
        enc.epochs = e;
    }
    enc.toggles.align &= !a.no_align;
    enc.toggles.distribution &= !a.no_distribution;
    enc.toggles.self_kd &= !a.no_self_kd;
    if let Some(aug) = a.aug {
        enc.augmentation = aug.into();
    }
    if let Some(r) = a.representation {
        enc.representation = r.into();
    }
    cfg.validate()?;
    let gen_path = a.generator.clone().unwrap_or_else(|| cfg.generator_path());
    let gen = load_generator(&gen_path)?;
    let (train, _) = cfg.load_data()?;
    gen.check_dataset(&train)?;
    let groups = FeatureEncoder::fit(&train, FitOptions::encoder_path())?.group_names().to_vec();
    if groups != gen.group_names() {
        return Err(invalid(format!(
            "generator groups {:?} differ from the data's {:?}",
            gen.group_names(),
            groups
        )));
    }

    let run = fit_encoder_stack(&train, &gen, &cfg.encoder)?;
    let dir = cfg.encoder_dir();
    if dir.exists() {
        std::fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    create_dir(&dir)?;
    let mut files: Vec<PathBuf> = Vec::new();
    for s in &run.snapshots {
        let p = dir.join(format!("{SNAPSHOT_PREFIX}{}.json", s.epoch));
        checkpoint::save(&p, s)?;
        files.push(p);
    }
    let losses = cfg.out_dir.join("encoder_loss.csv");
    write(
        &losses,
        &csv_lines("epoch,align,swd,self_kd,total,group_mean_distance", &run.history, |e| {
            format!("{},{},{},{},{},{}", e.epoch, e.align, e.swd, e.self_kd, e.total, e.group_mean_distance)
        }),
    )?;
    files.push(losses);
    let refs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    manifest::update(&cfg.out_dir, &["encoder"], &refs, "fit-encoder", cfg.seed, &cfg.hash())?;
    let last = run.history.last().expect("epochs > 0");
    println!(
        "encoder: {} epochs, {} snapshots, group mean distance {:.4} -> {:.4}",
        run.history.len(),
        run.snapshots.len(),
        run.initial_group_distance,
        last.group_mean_distance
    );
    Ok(())
}

pub fn embed(a: &EmbedArgs) -> Result<()> {
    if !a.snapshot.is_file() {
        return Err(invalid(format!("no snapshot at {}", a.snapshot.display())));
    }
    let snap: EncoderSnapshot = checkpoint::load(&a.snapshot)?;
    let ds = load_csv(&a.data, &snap.features.schema)?;
    let z = snap.embed_dataset(&ds)?;
    let header: Vec<String> = (0..z.ncols()).map(|k| format!("z{k}")).collect();
    let rows: Vec<_> = z.rows().into_iter().collect();
    write(
        &a.out,
        &csv_lines(&header.join(","), &rows, |r| {
            r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        }),
    )?;
    println!("wrote {}x{} embeddings to {}", z.nrows(), z.ncols(), a.out.display());
    Ok(())
}

/// Snapshots in `dir`, oldest epoch first.
pub fn load_snapshots(dir: &Path) -> Result<Vec<EncoderSnapshot>> {
    let entries = std::fs::read_dir(dir).map_err(|e| invalid(format!("encoder directory {}: {e}", dir.display())))?;
    let mut found = Vec::new();
    for entry in entries {
        let p = entry?.path();
        let epoch = p
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix(SNAPSHOT_PREFIX))
            .and_then(|n| n.strip_suffix(".json"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(e) = epoch {
            found.push((e, p));
        }
    }
    if found.is_empty() {
        return Err(invalid(format!("no snapshots in {}", dir.display())));
    }
    found.sort();
    found
        .into_iter()
        .map(|(_, p)| checkpoint::load(&p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

fn density_outputs(out: &Path, suffix: &str, ev: &Evaluation, files: &mut Vec<PathBuf>) -> Result<()> {
    let Some(d) = &ev.density else {
        return Ok(());
    };
    let mut text = String::from("group,bin_low,bin_high,fraction\n");
    for (g, masses) in &d.groups {
        for (b, m) in masses.iter().enumerate() {
            text.push_str(&format!("{},{},{},{m}\n", ev.group_names[*g], d.edges[b], d.edges[b + 1]));
        }
    }
    let csv = out.join(format!("density{suffix}.csv"));
    write(&csv, &text)?;
    let names: Vec<String> = d.groups.iter().map(|(g, _)| ev.group_names[*g].clone()).collect();
    let series: Vec<Vec<f64>> = d.groups.iter().map(|(_, m)| m.clone()).collect();
    let plot = out.join(format!("density{suffix}.svg"));
    write(&plot, &svg::step_histograms("Predicted probability by group", "predicted probability", &d.edges, &series, &names))?;
    files.extend([csv, plot]);
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let cfg = load_config(&a.run)?;
    cfg.validate()?;
    let gen = load_generator(&a.generator.clone().unwrap_or_else(|| cfg.generator_path()))?;
    let snapshots = if a.raw {
        Vec::new()
    } else {
        load_snapshots(&a.encoder_dir.clone().unwrap_or_else(|| cfg.encoder_dir()))?
    };
    let (train, test) = cfg.load_data()?;
    create_dir(&cfg.out_dir)?;

    let (ev, suffix, command) = if a.raw {
        (fairtab::eval::evaluate_raw(&train, &test, &gen, &cfg.eval)?, "_raw", "evaluate --raw")
    } else {
        (fairtab::eval::evaluate_run(&snapshots, &train, &test, &gen, &cfg.eval)?, "", "evaluate")
    };
    let out = &cfg.out_dir;
    let metrics = out.join(format!("metrics{suffix}.csv"));
    ev.report.write_csv(&metrics)?;
    let summary = out.join(format!("summary{suffix}.txt"));
    write(&summary, &ev.report.summary())?;
    let mut files = vec![metrics, summary];
    density_outputs(out, suffix, &ev, &mut files)?;
    if !a.raw {
        let xs: Vec<f64> = snapshots.iter().map(|s| s.epoch as f64).collect();
        let ys: Vec<f64> = ev.report.rows.iter().map(|r| r.leakage_auc).collect();
        let plot = out.join("leakage.svg");
        write(&plot, &svg::polyline("Sensitive-attribute leakage", "epoch", "leakage AUC", &xs, &ys))?;
        files.push(plot);
    }
    let refs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    manifest::update(out, &[], &refs, command, cfg.seed, &cfg.hash())?;
    info!("wrote {} files to {}", files.len(), out.display());
    print!("{}", ev.report.summary());
    if ev.report.task == Task::Classification {
        println!("density plot: {}", out.join(format!("density{suffix}.svg")).display());
    }
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let rows = report::merge(&a.inputs)?;
    let table = report::to_csv(&rows)?;
    if let Some(p) = &a.out {
        write(p, &table)?;
    }
    print!("{table}");
    Ok(())
}
