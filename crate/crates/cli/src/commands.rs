use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use hgat_core::graph::load_graph;
use hgat_core::model::{predict, Task};
use hgat_core::synth::{generate, write_synthetic, SynthSpec, EDGES_FILE, NODES_FILE, SCHEMA_FILE};
use hgat_core::train::{load_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use crate::config::{Overrides, RunConfig, CHECKPOINT_FILE};
use crate::error::{CliError, Exit};
use crate::pipeline::{self, Data};
use crate::{Command, EvalArgs, GenSynthArgs, InspectArgs, PredictArgs, SweepArgs, TrainArgs};

pub fn dispatch(
    command: Command,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<Exit, CliError> {
    match command {
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Predict(a) => predict_ids(a, out, err),
        Command::GenSynth(a) => gen_synth(a, out),
        Command::Inspect(a) => inspect(a, out),
        Command::Sweep(a) => sweep(a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Input(format!("standard output: {e}")))
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<Exit, CliError> {
    let cfg = RunConfig::resolve(&a.common)?;
    cfg.validate()?;
    let data = pipeline::load_data(&cfg)?;
    let result = pipeline::train(&cfg, &data)?;
    pipeline::write_train_artifacts(&cfg.out, &cfg.checkpoint_path(), &result)?;
    emit(
        out,
        &format!(
            "# best epoch {} of {}, val loss {}\n{}",
            result.checkpoint.epoch,
            result.history.len(),
            result.checkpoint.best_val_loss,
            result.test.to_text()
        ),
    )?;
    Ok(Exit::Success)
}

/// Config with the checkpoint's run settings between file and flags.
fn checkpoint_config(o: &Overrides) -> Result<(RunConfig, Checkpoint), CliError> {
    let first = RunConfig::resolve(o)?;
    let ckpt = load_checkpoint(&first.checkpoint_path())?;
    let mut cfg = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.adopt_run(&ckpt.run, ckpt.config.task);
    cfg.apply(o);
    cfg.task = ckpt.config.task;
    Ok((cfg, ckpt))
}

fn load_for_checkpoint(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<Data, CliError> {
    let data = pipeline::load_data(cfg)?;
    ckpt.check_features(&data.features)?;
    Ok(data)
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<Exit, CliError> {
    let (cfg, ckpt) = checkpoint_config(&a.common)?;
    cfg.validate()?;
    let data = load_for_checkpoint(&cfg, &ckpt)?;
    let splits = pipeline::splits(&data.graph, cfg.task, cfg.theta, cfg.seed_split)?;
    let (evaluation, report) = pipeline::evaluate_fold(
        &data,
        &ckpt.config,
        &ckpt.params,
        &splits,
        a.fold,
        cfg.schema_mode(),
    )?;
    if let Some(path) = &a.dump_logits {
        pipeline::write_text(path, &pipeline::format_logits(&data.graph, &evaluation))?;
    }
    let text = report.to_text();
    if let Some(path) = &a.report {
        pipeline::write_text(path, &text)?;
    }
    emit(out, &text)?;
    Ok(Exit::Success)
}

fn read_ids(a: &PredictArgs) -> Result<Vec<String>, CliError> {
    let mut ids = a.ids.clone();
    if let Some(path) = &a.ids_file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        ids.extend(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from),
        );
    }
    Ok(ids)
}

fn predict_ids(a: PredictArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<Exit, CliError> {
    let ids = read_ids(&a)?;
    let (cfg, ckpt) = checkpoint_config(&a.common)?;
    let data = load_for_checkpoint(&cfg, &ckpt)?;
    let target = data.graph.schema().target();
    let mut known = Vec::new();
    let mut missing = 0;
    for (pos, id) in ids.iter().enumerate() {
        match data.graph.lookup(id) {
            Some(n) if n.ty == target => known.push((pos, n.index)),
            Some(_) => {
                missing += 1;
                let _ = writeln!(
                    err,
                    "error: `{id}` is not a {} node; skipped",
                    data.graph.schema().target_type()
                );
            }
            None => {
                missing += 1;
                let _ = writeln!(err, "error: unknown id `{id}`; skipped");
            }
        }
    }
    let names = pipeline::class_names(&data.graph, ckpt.config.task)?;
    let targets: Vec<usize> = known.iter().map(|&(_, t)| t).collect();
    let preds = predict(
        &data.graph,
        &data.features,
        &ckpt.params,
        &ckpt.config,
        &targets,
        cfg.schema_mode(),
    )?;
    let mut text = String::new();
    for ((pos, _), p) in known.iter().zip(&preds) {
        writeln!(text, "{}\t{}\t{}", ids[*pos], names[p.class], p.probability).unwrap();
    }
    emit(out, &text)?;
    Ok(if missing > 0 {
        Exit::Input
    } else {
        Exit::Success
    })
}

fn gen_synth(a: GenSynthArgs, out: &mut dyn Write) -> Result<Exit, CliError> {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None if a.politifact_shaped => SynthSpec::politifact_shaped(0),
        None => SynthSpec::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { spec.$f = v; })* };
    }
    set!(
        articles,
        creators,
        subjects,
        classes,
        max_subjects,
        signal,
        unlabeled,
        seed
    );
    if a.subject_signal.is_some() {
        spec.subject_signal = a.subject_signal;
    }
    if a.creator_signal.is_some() {
        spec.creator_signal = a.creator_signal;
    }
    let synth = generate(&spec)?;
    write_synthetic(&synth, &a.out)?;
    let m = &synth.manifest;
    let mut text = format!("wrote {}\n", a.out.display());
    for (t, n) in &m.node_counts {
        writeln!(text, "  {t}: {n}").unwrap();
    }
    for (t, n) in &m.edge_counts {
        writeln!(text, "  {t}: {n}").unwrap();
    }
    emit(out, &text)?;
    Ok(Exit::Success)
}

fn is_checkpoint(path: &Path) -> bool {
    use std::io::Read;
    let mut magic = [0u8; 4];
    std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .is_ok()
        && &magic == b"HGAT"
}

fn inspect(a: InspectArgs, out: &mut dyn Write) -> Result<Exit, CliError> {
    let path = &a.path;
    if path.is_file() && (is_checkpoint(path) || path.extension().is_some_and(|e| e == "hgat")) {
        let ckpt = load_checkpoint(path)?;
        emit(out, &describe_checkpoint(&ckpt))?;
        return Ok(Exit::Success);
    }
    let dir: PathBuf = if path.is_dir() {
        path.clone()
    } else if path.file_name().is_some_and(|n| n == SCHEMA_FILE) {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    } else if path.is_file() {
        return Err(CliError::Input(format!(
            "{}: unknown format (expected a checkpoint, a graph directory or {SCHEMA_FILE})",
            path.display()
        )));
    } else {
        return Err(CliError::Input(format!(
            "{}: no such file or directory",
            path.display()
        )));
    };
    let graph = load_graph(
        &dir.join(SCHEMA_FILE),
        &dir.join(NODES_FILE),
        &dir.join(EDGES_FILE),
    )?;
    emit(out, &graph.summarize().to_string())?;
    Ok(Exit::Success)
}

pub fn describe_checkpoint(c: &Checkpoint) -> String {
    let m = &c.config;
    let mut s = String::new();
    writeln!(s, "checkpoint version {CHECKPOINT_VERSION}").unwrap();
    writeln!(s, "task {} ({} classes)", m.task, m.num_classes).unwrap();
    writeln!(s, "F={} K={} F′={}", m.hidden, m.heads, m.schema_dim).unwrap();
    writeln!(
        s,
        "leaky_slope={} aggregation={} dropout={}",
        m.leaky_slope, m.aggregation, m.dropout
    )
    .unwrap();
    writeln!(s, "best epoch {}, val loss {}", c.epoch, c.best_val_loss).unwrap();
    let r = &c.run;
    writeln!(
        s,
        "run theta={} seed_split={} seed_init={} seed_train={} ablate_schema={} homogeneous={} min_df={} max_features={}",
        r.theta.map_or("-".to_string(), |t| t.to_string()),
        r.split_seed,
        r.init_seed,
        r.train_seed,
        r.ablate_schema,
        r.homogeneous,
        r.features.vocab.min_df,
        r.features.vocab.max_features
    )
    .unwrap();
    writeln!(s, "# node types").unwrap();
    for ((name, fp), dim) in c.fingerprints.iter().zip(c.params.feature_dims()) {
        writeln!(s, "  {name}\tdim {dim}\tvocabulary {fp}").unwrap();
    }
    writeln!(s, "# arrays").unwrap();
    for (name, t) in c.params.named() {
        writeln!(s, "  {name}\t{:?}", t.shape()).unwrap();
    }
    s
}

fn sweep(a: SweepArgs, out: &mut dyn Write) -> Result<Exit, CliError> {
    let base = RunConfig::resolve(&a.common)?;
    let data = pipeline::load_data(&base)?;
    let model = if base.homogeneous { "gat" } else { "hgat" };
    let mut variants = vec![(model, base.ablate_schema)];
    if a.with_ablation && !base.ablate_schema {
        variants.push(("hgat-no-schema", true));
    }
    let mut table = String::from(
        "task\ttheta\tmodel\taccuracy\tprecision\trecall\tf1\tmacro_precision\tmacro_recall\tmacro_f1\n",
    );
    let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    for &task in &a.tasks {
        for &theta in &a.thetas {
            for &(name, ablate) in &variants {
                let mut cfg = base.clone();
                cfg.task = task;
                cfg.theta = theta;
                cfg.ablate_schema = ablate;
                cfg.out = base
                    .out
                    .join(task.to_string())
                    .join(format!("theta-{theta}"))
                    .join(name);
                cfg.checkpoint = Some(cfg.out.join(CHECKPOINT_FILE));
                let result = pipeline::train(&cfg, &data)?;
                pipeline::write_train_artifacts(&cfg.out, &cfg.checkpoint_path(), &result)?;
                let r = &result.test;
                let (p, rc, f) = match task {
                    Task::Binary => (r.precision, r.recall, r.f1),
                    Task::Multiclass => (None, None, None),
                };
                writeln!(
                    table,
                    "{task}\t{theta}\t{name}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    cell(Some(r.accuracy)),
                    cell(p),
                    cell(rc),
                    cell(f),
                    cell(Some(r.macro_precision)),
                    cell(Some(r.macro_recall)),
                    cell(Some(r.macro_f1))
                )
                .unwrap();
            }
        }
    }
    pipeline::write_text(&base.out.join("sweep.tsv"), &table)?;
    emit(out, &table)?;
    Ok(Exit::Success)
}
