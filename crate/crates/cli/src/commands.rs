use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gmia_core::data::{Dataset, Record};
use gmia_core::direct::{HypothesisResult, PreparedDirect};
use gmia_core::ensemble::{load_ensemble, save_ensemble, Ensemble};
use gmia_core::eval::{
    enhancing_for, histogram_csv, likelihood_csv, model_id, parse_model_id, partition, run_protocol, selection_params,
    split_plan, toy_demonstration, train_reference, train_target, write_report, AttackKind, Partition,
};
use gmia_core::indirect::{read_enhancing_csv, write_enhancing_csv, EnhancingSet, PreparedIndirect};
use gmia_core::model::{load_model, ModelParams};
use gmia_core::par;
use gmia_core::selection::{select_vulnerable, write_verdicts_csv};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const REFS_DIR: &str = "refs";
pub const SELECT_DIR: &str = "select";
pub const ENHANCING_DIR: &str = "enhancing";
pub const EVALUATE_DIR: &str = "evaluate";
pub const TOY_DIR: &str = "toy";

/// Creates `<output>/<name>` and writes the config snapshot into it. An
/// existing non-empty stage directory is replaced only with `force`.
pub fn open_stage(cfg: &RunConfig, name: &str, force: bool) -> Result<PathBuf> {
    let dir = cfg.output_dir.join(name);
    if dir.exists() {
        let occupied = fs::read_dir(&dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .next()
            .is_some();
        if occupied {
            if !force {
                bail!("{} already exists; pass --force to overwrite it", dir.display());
            }
            fs::remove_dir_all(&dir).with_context(|| format!("removing {}", dir.display()))?;
        }
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(dir)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

#[derive(Serialize)]
struct PartitionFile<'a> {
    seed: u64,
    target_pool: Vec<&'a str>,
    null_pool: Vec<&'a str>,
    reference_pool: Vec<&'a str>,
}

fn ids(d: &Dataset) -> Vec<&str> {
    d.records.iter().map(|r| r.id.as_str()).collect()
}

fn check_shape(cfg: &RunConfig, data: &Dataset) -> Result<()> {
    let spec = &cfg.protocol.model;
    if spec.input_dim() != data.dim() || spec.class_count() != data.class_count {
        bail!(
            "model layer sizes {:?} do not fit the dataset ({} features, {} classes)",
            spec.layer_sizes,
            data.dim(),
            data.class_count
        );
    }
    Ok(())
}

pub fn train_refs(cfg: &RunConfig, data: &Dataset, force: bool) -> Result<()> {
    check_shape(cfg, data)?;
    let part = partition(data, &cfg.protocol)?;
    let ensemble = train_reference(&part, &cfg.protocol)?;
    let dir = open_stage(cfg, REFS_DIR, force)?;
    save_ensemble(&dir, &ensemble).with_context(|| format!("saving ensemble to {}", dir.display()))?;
    let pf = PartitionFile {
        seed: cfg.protocol.stage_seed("partition"),
        target_pool: ids(&part.target_pool),
        null_pool: ids(&part.null_pool),
        reference_pool: ids(&part.reference_pool),
    };
    write(&dir.join("partition.json"), serde_json::to_vec_pretty(&pf)?)?;
    println!("trained {} reference models -> {}", ensemble.k(), dir.display());
    Ok(())
}

/// Loads the reference ensemble written by `train-refs` and checks that it
/// belongs to the current configuration.
fn load_refs(cfg: &RunConfig) -> Result<Ensemble> {
    let dir = cfg.output_dir.join(REFS_DIR);
    if !dir.join("ensemble.json").is_file() {
        bail!("no reference ensemble at {}; run `gmia train-refs` first", dir.display());
    }
    let e = load_ensemble(&dir).with_context(|| format!("loading ensemble from {}", dir.display()))?;
    let p = &cfg.protocol;
    if e.seed != p.stage_seed("references") || e.spec != p.model || e.k() != p.n_references || e.config != p.training {
        bail!(
            "reference ensemble at {} was built from a different configuration; rerun `gmia train-refs --force`",
            dir.display()
        );
    }
    Ok(e)
}

pub fn select_targets(cfg: &RunConfig, data: &Dataset, force: bool) -> Result<()> {
    let part = partition(data, &cfg.protocol)?;
    let refs = load_refs(cfg)?;
    let params = selection_params(&cfg.protocol, &part, &cfg.protocol.selection);
    let verdicts = select_vulnerable(&part.target_pool, &part.reference_pool, &refs, &params)?;
    let dir = open_stage(cfg, SELECT_DIR, force)?;
    let path = dir.join("verdicts.csv");
    write_verdicts_csv(&path, &verdicts, &params).with_context(|| format!("writing {}", path.display()))?;
    let selected = verdicts.iter().filter(|v| v.selected).count();
    println!(
        "{selected} of {} candidates selected (delta {}, beta {}) -> {}",
        verdicts.len(),
        params.delta,
        params.beta,
        path.display()
    );
    Ok(())
}

#[derive(Deserialize)]
struct VerdictRow {
    record_id: String,
    selected: bool,
}

fn selected_from_verdicts(cfg: &RunConfig) -> Result<Vec<String>> {
    let path = cfg.output_dir.join(SELECT_DIR).join("verdicts.csv");
    if !path.is_file() {
        bail!("no records given and no verdicts at {}; pass --record or run `gmia select-targets`", path.display());
    }
    let mut rdr = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<VerdictRow>() {
        let row = row.with_context(|| format!("parsing {}", path.display()))?;
        if row.selected {
            out.push(row.record_id);
        }
    }
    Ok(out)
}

fn lookup<'a>(data: &'a Dataset, ids: &[String]) -> Result<Vec<&'a Record>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for id in ids {
        let r = data.get(id).with_context(|| format!("unknown record id `{id}` in dataset {}", data.name))?;
        if seen.insert(id.as_str()) {
            out.push(r);
        }
    }
    Ok(out)
}

fn enhancing_summary(sets: &[EnhancingSet]) -> String {
    let mut s = String::from("record_id,candidates,accepted,min_distance,max_distance\n");
    for set in sets {
        let (lo, hi) = set.distance_range().map_or((String::new(), String::new()), |(a, b)| (a.to_string(), b.to_string()));
        let _ = writeln!(s, "{},{},{},{lo},{hi}", set.target_id, set.records.len(), set.accepted().len());
    }
    s
}

pub fn gen_enhancing(cfg: &RunConfig, data: &Dataset, records: &[String], force: bool) -> Result<()> {
    let part = partition(data, &cfg.protocol)?;
    let refs = load_refs(cfg)?;
    let ids = if records.is_empty() { selected_from_verdicts(cfg)? } else { records.to_vec() };
    let targets = lookup(data, &ids)?;
    for w in cfg.protocol.indirect.validate()? {
        eprintln!("warning: {w}");
    }
    let mut sets = Vec::with_capacity(targets.len());
    for r in &targets {
        sets.push(enhancing_for(&part, &refs, &cfg.protocol, r).with_context(|| format!("enhancing records for `{}`", r.id))?);
    }
    let dir = open_stage(cfg, ENHANCING_DIR, force)?;
    for set in &sets {
        let path = dir.join(format!("{}.csv", file_stem_for(&set.target_id)));
        write_enhancing_csv(&path, set).with_context(|| format!("writing {}", path.display()))?;
    }
    write(&dir.join("summary.csv"), enhancing_summary(&sets))?;
    println!("enhancing records for {} targets -> {}", sets.len(), dir.display());
    Ok(())
}

/// A model under attack; `member` is known only for protocol target models.
struct AttackedModel {
    id: String,
    params: ModelParams,
    index: Option<usize>,
}

fn attacked_models(cfg: &RunConfig, part: &Partition, model_ids: &[String], model_files: &[PathBuf]) -> Result<Vec<AttackedModel>> {
    let plan = split_plan(part, &cfg.protocol)?;
    let indices: Vec<usize> = if model_ids.is_empty() && model_files.is_empty() {
        (0..plan.n_models).collect()
    } else {
        let mut v = Vec::new();
        for id in model_ids {
            match parse_model_id(id) {
                Some(m) if m < plan.n_models => v.push(m),
                _ => bail!("unknown model id `{id}`; expected target-000 .. {}", model_id(plan.n_models - 1)),
            }
        }
        v.sort_unstable();
        v.dedup();
        v
    };
    let trained = par::try_map_indexed(indices.len(), |i| train_target(part, &plan, &cfg.protocol, indices[i]))?;
    let mut out: Vec<AttackedModel> = indices
        .iter()
        .zip(trained)
        .map(|(&m, params)| AttackedModel {
            id: model_id(m),
            params,
            index: Some(m),
        })
        .collect();
    for path in model_files {
        let (params, _) = load_model(path).with_context(|| format!("loading model {}", path.display()))?;
        let id = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        out.push(AttackedModel { id, params, index: None });
    }
    Ok(out)
}

fn result_line(out: &mut String, record: &str, kind: AttackKind, h: &HypothesisResult, member: Option<bool>, cutoffs: &[f64]) {
    let member = member.map_or(String::new(), |m| m.to_string());
    let _ = write!(
        out,
        "{record},{},{},{},{},{member},{}",
        h.model_id,
        kind.as_str(),
        h.p_value,
        h.statistic,
        h.degenerate
    );
    for &c in cutoffs {
        let _ = write!(out, ",{}", h.p_value < c);
    }
    out.push('\n');
}

pub struct AttackRequest<'a> {
    pub kind: AttackKind,
    pub records: &'a [String],
    pub models: &'a [String],
    pub model_files: &'a [PathBuf],
}

pub fn attack(cfg: &RunConfig, data: &Dataset, req: &AttackRequest<'_>, force: bool) -> Result<()> {
    if req.records.is_empty() {
        bail!("at least one --record is required");
    }
    let part = partition(data, &cfg.protocol)?;
    let targets = lookup(data, req.records)?;
    let refs = load_refs(cfg)?;
    let models = attacked_models(cfg, &part, req.models, req.model_files)?;
    let plan = split_plan(&part, &cfg.protocol)?;
    let cutoffs = &cfg.protocol.cutoffs;

    let mut generated = Vec::new();
    let mut csv = String::from("record_id,model_id,kind,p_value,statistic,member,degenerate");
    for c in cutoffs {
        let _ = write!(csv, ",fire@{c}");
    }
    csv.push('\n');
    for r in &targets {
        let results: Vec<HypothesisResult> = match req.kind {
            AttackKind::Direct => {
                let prepared = PreparedDirect::new(&refs, r).with_context(|| format!("record `{}`", r.id))?;
                par::try_map_indexed(models.len(), |i| prepared.attack(&models[i].params, &models[i].id))?
            }
            AttackKind::Indirect => {
                let stored = cfg.output_dir.join(ENHANCING_DIR).join(format!("{}.csv", file_stem_for(&r.id)));
                let set = if stored.is_file() {
                    let set = read_enhancing_csv(&stored).with_context(|| format!("reading {}", stored.display()))?;
                    if set.target_id != r.id {
                        bail!("{} holds enhancing records for `{}`, not `{}`", stored.display(), set.target_id, r.id);
                    }
                    set
                } else {
                    let set = enhancing_for(&part, &refs, &cfg.protocol, r).with_context(|| format!("enhancing records for `{}`", r.id))?;
                    generated.push(set.clone());
                    set
                };
                let accepted = set.accepted();
                if accepted.is_empty() {
                    eprintln!("warning: no enhancing records accepted for `{}`; skipped", r.id);
                    continue;
                }
                let prepared = PreparedIndirect::new(r, &accepted, &refs).with_context(|| format!("record `{}`", r.id))?;
                par::try_map_indexed(models.len(), |i| prepared.attack(&models[i].params, &models[i].id))?
            }
        };
        for (m, h) in models.iter().zip(&results) {
            let member = m.index.map(|i| plan.is_member(i, &r.id));
            result_line(&mut csv, &r.id, req.kind, h, member, cutoffs);
        }
    }
    let dir = open_stage(cfg, &format!("attack-{}", req.kind.as_str()), force)?;
    for set in &generated {
        let path = dir.join(format!("enhancing-{}.csv", file_stem_for(&set.target_id)));
        write_enhancing_csv(&path, set).with_context(|| format!("writing {}", path.display()))?;
    }
    let path = dir.join("results.csv");
    write(&path, csv)?;
    println!("{} attack on {} records x {} models -> {}", req.kind.as_str(), targets.len(), models.len(), path.display());
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, data: &Dataset, kinds: Option<&[AttackKind]>, force: bool) -> Result<()> {
    check_shape(cfg, data)?;
    let mut protocol = cfg.protocol.clone();
    if let Some(k) = kinds {
        protocol.kinds = k.to_vec();
    }
    let mut snapshot = cfg.clone();
    snapshot.protocol = protocol.clone();
    let report = run_protocol(data, &protocol)?;
    let dir = open_stage(&snapshot, EVALUATE_DIR, force)?;
    write_report(&dir, &report).with_context(|| format!("writing report to {}", dir.display()))?;
    for curve in &report.summary.curves {
        for p in &curve.points {
            let precision = p.precision.map_or("-".to_string(), |v| format!("{v:.3}"));
            println!(
                "{:<8} p<{:<8} tp {:>4} fp {:>4} precision {precision} recall {:.4}",
                curve.kind.as_str(),
                p.cutoff,
                p.tp,
                p.fp,
                p.recall
            );
        }
    }
    for n in &report.summary.notes {
        println!("note: {n}");
    }
    println!("{} selected records -> {}", report.summary.selected.len(), dir.display());
    Ok(())
}

pub fn toy_demo(cfg: &RunConfig, force: bool) -> Result<()> {
    let report = toy_demonstration(&cfg.toy)?;
    let dir = open_stage(cfg, TOY_DIR, force)?;
    write(&dir.join("toy.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    write(&dir.join("histogram.csv"), histogram_csv(&report))?;
    write(&dir.join("likelihood.csv"), likelihood_csv(&report))?;
    println!(
        "outlier AUC {:.3}, control AUC {:.3} -> {}",
        report.outlier.auc,
        report.control.auc,
        dir.display()
    );
    Ok(())
}
