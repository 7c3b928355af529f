use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use duohand_core::collision::state_penetration_depth;
use duohand_core::config::Config;
use duohand_core::corpus::{read_corpus, write_corpus, Corpus, CorpusKind};
use duohand_core::diffusion::{train_diffusion, NoiseSchedule, TransformerDenoiser};
use duohand_core::exec::with_jobs;
use duohand_core::fusion::{render_inputs, train_distillation};
use duohand_core::hand::{skin, write_obj, HandModel};
use duohand_core::metrics::evaluate;
use duohand_core::pipeline::{refine_all, Refiner};
use duohand_core::synth::{generate_corpus, CorpusRecord};
use duohand_core::state::TwoHandState;
use duohand_core::Execution;
use duohand_nn::rng::derive;
use duohand_nn::WeightsFile;

use crate::provenance::Provenance;
use crate::{io_error, selftest, CliError, CliResult};

/// Corpus files written by `synth`.
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

pub(crate) fn dispatch(command: &str, cfg: &Config) -> CliResult<()> {
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
    let jobs = cfg.usize("run.jobs").max(1);
    let prov = with_jobs(jobs, |exec| match command {
        "synth" => synth(cfg, exec),
        "train-diffusion" => train_diffusion_cmd(cfg, exec),
        "train-fusion" => train_fusion(cfg, exec),
        "refine" => refine(cfg, exec),
        "eval" => eval(cfg, exec),
        "export-mesh" => export_mesh(cfg),
        "selftest" => selftest::run(cfg, exec),
        other => Err(CliError::Config(format!("unknown command `{other}`"))),
    })?;
    prov.write(command, cfg)?;
    Ok(())
}

fn hand_model(cfg: &Config) -> CliResult<HandModel> {
    Ok(HandModel::new(cfg.tessellation()?)?)
}

fn load_corpus(path: &Path) -> CliResult<Corpus> {
    if !path.exists() {
        return Err(io_error(path, "no such file"));
    }
    Ok(read_corpus(path)?)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn synth(cfg: &Config, exec: Execution) -> CliResult<Provenance> {
    let model = hand_model(cfg)?;
    let synth = cfg.synth()?;
    let seed = cfg.int("synth.seed");
    let hash = cfg.hash_of(&["synth.", "mesh."]);
    let counts = [cfg.int("synth.train_count"), cfg.int("synth.val_count"), cfg.int("synth.test_count")];
    let mut prov = Provenance { seeds: vec![("synth.seed", seed)], ..Default::default() };
    let mut start = 0;
    for (name, count) in SPLITS.iter().zip(counts) {
        let records = generate_corpus(seed, start..start + count, &model, &synth, exec)?;
        start += count;
        let path = cfg.out_dir().join(format!("{name}.corpus"));
        write_corpus(&Corpus { kind: CorpusKind::Synthetic, config_hash: hash.clone(), records }, &path)?;
        eprintln!("wrote {count} records to {}", path.display());
        prov.outputs.push(path);
    }
    Ok(prov)
}

fn write_curve(path: &Path, losses: &[f64]) -> CliResult<()> {
    let mut text = String::from("# step loss\n");
    for (i, l) in losses.iter().enumerate() {
        text.push_str(&format!("{i} {l:.17e}\n"));
    }
    write_text(path, &text)
}

fn train_diffusion_cmd(cfg: &Config, exec: Execution) -> CliResult<Provenance> {
    let input = cfg.path_or("diffusion.train_corpus", "train.corpus");
    let corpus = load_corpus(&input)?;
    if corpus.kind != CorpusKind::Synthetic {
        return Err(CliError::Config(format!("{} is not a synthetic corpus", input.display())));
    }
    let model_cfg = cfg.denoiser()?;
    let train = cfg.training()?;
    let mut losses = Vec::with_capacity(train.steps);
    let started = std::time::Instant::now();
    let (model, normalizer) = train_diffusion(&corpus.records, model_cfg, &train, exec, |step, loss| {
        losses.push(loss);
        if (step + 1) % 50 == 0 || step + 1 == train.steps {
            eprintln!("step {:>6} loss {loss:.5} ({:.0?})", step + 1, started.elapsed());
        }
    })?;
    let out = cfg.out_dir();
    let weights = out.join("diffusion.weights");
    model.to_weights(&normalizer).save(&weights)?;
    let curve = out.join("diffusion_loss.txt");
    write_curve(&curve, &losses)?;
    Ok(Provenance { seeds: vec![("diffusion.seed", train.seed)], inputs: vec![input], outputs: vec![weights, curve] })
}

fn train_fusion(cfg: &Config, exec: Execution) -> CliResult<Provenance> {
    let input = cfg.path_or("fusion.corpus", "train.corpus");
    let corpus = load_corpus(&input)?;
    let model = hand_model(cfg)?;
    let render = cfg.render()?;
    let fusion = cfg.fusion()?;
    let distill = cfg.distill()?;
    let n = cfg.usize("fusion.samples").min(corpus.records.len());
    if n == 0 {
        return Err(CliError::Config("fusion.samples selects no records".into()));
    }
    let states: Vec<TwoHandState> = corpus.records[..n].iter().map(|r| r.penetrated.clone()).collect();
    let inputs = render_inputs(&states, &model, &render, exec)?;
    let mut listing = String::from("# id content-sha256\n");
    for (r, i) in corpus.records.iter().zip(&inputs) {
        listing.push_str(&format!("{} {}\n", r.id, i.content_hash()));
    }
    let mut losses = Vec::with_capacity(distill.steps);
    let (student, _teacher) = train_distillation(inputs, fusion, render.resolution, &distill, exec, |step, loss| {
        losses.push(loss);
        if (step + 1) % 200 == 0 {
            eprintln!("step {:>6} loss {loss:.6}", step + 1);
        }
    })?;
    let out = cfg.out_dir();
    let weights = out.join("fusion_student.weights");
    WeightsFile::from_store(&student.store).save(&weights)?;
    let curve = out.join("fusion_loss.txt");
    write_curve(&curve, &losses)?;
    let list = out.join("fusion_inputs.txt");
    write_text(&list, &listing)?;
    Ok(Provenance { seeds: vec![("fusion.seed", distill.seed)], inputs: vec![input], outputs: vec![weights, curve, list] })
}

/// Sampling seed of one record.
pub fn record_seed(diffusion_seed: u64, record_id: u64) -> u64 {
    derive(diffusion_seed, record_id)
}

fn refine(cfg: &Config, exec: Execution) -> CliResult<Provenance> {
    let input = cfg.path_or("refine.input", "test.corpus");
    let weights_path = cfg.path_or("refine.weights", "diffusion.weights");
    let corpus = load_corpus(&input)?;
    if !weights_path.exists() {
        return Err(io_error(&weights_path, "no such file"));
    }
    let (denoiser, normalizer) = TransformerDenoiser::from_weights(&WeightsFile::load(&weights_path)?)?;
    let model = hand_model(cfg)?;
    let collision = cfg.collision()?;
    let render = cfg.render()?;
    let guidance = cfg.guidance()?;
    let schedule = NoiseSchedule::cosine(denoiser.config.t_max)?;
    let refiner = Refiner {
        model: &model,
        collision: &collision,
        render: &render,
        denoiser: &denoiser,
        normalizer: &normalizer,
        schedule: &schedule,
        guidance: &guidance,
    };
    let seed = cfg.int("diffusion.seed");
    let samples: Vec<(u64, TwoHandState)> = corpus.records.iter().map(|r| (r.id, r.penetrated.clone())).collect();
    let seeds: Vec<u64> = corpus.records.iter().map(|r| record_seed(seed, r.id)).collect();
    let started = std::time::Instant::now();
    let refined = refine_all(&samples, &seeds, &refiner, exec)?;
    eprintln!("refined {} records ({:.0?})", refined.len(), started.elapsed());

    let depths = exec.map(refined.len(), |k| state_penetration_depth(&refined[k].state, &model));
    let records: Vec<CorpusRecord> = corpus
        .records
        .iter()
        .zip(&refined)
        .zip(depths)
        .map(|((r, out), depth)| CorpusRecord {
            penetrated: out.state.clone(),
            penetration_depth: depth,
            ..r.clone()
        })
        .collect();
    let out = cfg.out_dir();
    let path = out.join("refined.corpus");
    let hash = cfg.hash_of(&["collision.", "diffusion.", "mesh.", "render."]);
    write_corpus(&Corpus { kind: CorpusKind::Refined, config_hash: hash, records }, &path)?;
    let log = out.join("refine_log.txt");
    let file = std::fs::File::create(&log).map_err(|e| io_error(&log, e))?;
    let mut w = BufWriter::new(file);
    for r in &refined {
        w.write_all(r.log.to_text().as_bytes()).map_err(|e| io_error(&log, e))?;
    }
    w.flush().map_err(|e| io_error(&log, e))?;
    Ok(Provenance { seeds: vec![("diffusion.seed", seed)], inputs: vec![input, weights_path], outputs: vec![path, log] })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredColumn {
    Clean,
    Penetrated,
}

/// Column holding the predictions: refined corpora keep their outputs in
/// the penetrated column, synthetic ones are read from the clean column
/// unless asked otherwise.
pub fn eval_pred_column(setting: &str, kind: CorpusKind) -> PredColumn {
    match (setting, kind) {
        ("clean", _) => PredColumn::Clean,
        ("penetrated", _) => PredColumn::Penetrated,
        (_, CorpusKind::Refined) => PredColumn::Penetrated,
        (_, CorpusKind::Synthetic) => PredColumn::Clean,
    }
}

fn eval(cfg: &Config, exec: Execution) -> CliResult<Provenance> {
    let pred_path = cfg.path_or("eval.pred", "refined.corpus");
    let gt_path = cfg.path_or("eval.gt", "test.corpus");
    let pred = load_corpus(&pred_path)?;
    let gt = load_corpus(&gt_path)?;
    if pred.records.len() != gt.records.len() || pred.records.iter().zip(&gt.records).any(|(p, g)| p.id != g.id) {
        return Err(CliError::Config(format!(
            "{} and {} do not hold the same record ids",
            pred_path.display(),
            gt_path.display()
        )));
    }
    let column = eval_pred_column(cfg.get("eval.pred_column"), pred.kind);
    let preds: Vec<TwoHandState> = pred
        .records
        .iter()
        .map(|r| match column {
            PredColumn::Clean => r.clean.clone(),
            PredColumn::Penetrated => r.penetrated.clone(),
        })
        .collect();
    let gts: Vec<TwoHandState> = gt.records.iter().map(|r| r.clean.clone()).collect();
    let report = evaluate(&preds, &gts, &hand_model(cfg)?, &cfg.collision()?, exec)?;
    print!("{}", report.to_table());
    let out = cfg.out_dir();
    let table = out.join("metrics.txt");
    write_text(&table, &report.to_table())?;
    let kv = out.join("metrics.kv");
    write_text(&kv, &report.to_key_values())?;
    Ok(Provenance { inputs: vec![pred_path, gt_path], outputs: vec![table, kv], ..Default::default() })
}

fn export_mesh(cfg: &Config) -> CliResult<Provenance> {
    let input = cfg.path_or("export.input", "test.corpus");
    let corpus = load_corpus(&input)?;
    let id = cfg.int("export.record");
    let record = corpus
        .records
        .iter()
        .find(|r| r.id == id)
        .ok_or_else(|| CliError::Config(format!("record {id} not in {}", input.display())))?;
    let column = cfg.get("export.column");
    let state = if column == "clean" { &record.clean } else { &record.penetrated };
    let model = hand_model(cfg)?;
    let mut outputs = Vec::new();
    for (side, hand) in [("left", &state.left), ("right", &state.right)] {
        let path: PathBuf = cfg.out_dir().join(format!("mesh_{id}_{column}_{side}.obj"));
        let file = std::fs::File::create(&path).map_err(|e| io_error(&path, e))?;
        let mut w = BufWriter::new(file);
        write_obj(&skin(hand, &model), &mut w).map_err(|e| io_error(&path, e))?;
        w.flush().map_err(|e| io_error(&path, e))?;
        outputs.push(path);
    }
    Ok(Provenance { inputs: vec![input], outputs, ..Default::default() })
}
